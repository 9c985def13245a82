//! Accuracy against mean receptive field: which backbones are worth keeping.

use protoloc::fixtures::PARETO_CSV;
use protoloc::metrics::{pareto_front, read_pareto_csv, ParetoPoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut points = read_pareto_csv(PARETO_CSV.as_bytes())?;
    // A hypothetical backbone that is both less accurate and less local.
    points.push(ParetoPoint::new("dominated", 80.0, 75.0));
    for p in pareto_front(&points) {
        println!("{:<18} MRF {:>6.2}%  accuracy {:.2}%", p.label, p.mrf, p.accuracy);
    }
    Ok(())
}
