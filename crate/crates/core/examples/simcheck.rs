//! Error of the two similarity forms against a 128-bit reference.
//!
//! `cargo run --release --example simcheck [SAMPLES]`

use protoloc::numerics::{simcheck, DEFAULT_REGIONS};

fn main() {
    let samples = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    println!("{:>5} {:>12} {:>12} {:>12} {:>12} {:>8}", "dtype", "lo", "hi", "mse orig", "mse ours", "gain %");
    for r in simcheck(&DEFAULT_REGIONS, samples, 1e-6, 0) {
        println!(
            "{:>5} {:>12.1e} {:>12.1e} {:>12.3e} {:>12.3e} {:>8.2}",
            format!("{:?}", r.dtype),
            r.lo,
            r.hi,
            r.mse_original,
            r.mse_reformulated,
            r.improvement_pct
        );
    }
}
