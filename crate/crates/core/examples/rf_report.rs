//! Mean receptive field of every reference backbone, plus one exact field.
//!
//! `cargo run --release --example rf_report`

use protoloc::fixtures::reference_graphs;
use protoloc::rf::functional_rf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (stem, g) in reference_graphs() {
        let rf = functional_rf(&g)?;
        let last = g.nodes().last().expect("non-empty graph").id.clone();
        let stats = rf.stats(&last)?;
        println!(
            "{stem:>16} @ {last:<10} shape {:?}  mean {:.4}%  min {:.4}%  max {:.4}%",
            stats.shape, stats.mean_rf_pct, stats.min_rf_pct, stats.max_rf_pct
        );
    }
    let (_, vgg16) = reference_graphs().into_iter().find(|(s, _)| *s == "vgg16_maxpool5").unwrap();
    let rf = functional_rf(&vgg16)?;
    let corner = rf.field("maxpool5", 0, 0, 0)?;
    let centre = rf.field("maxpool5", 0, 3, 3)?;
    println!("vgg16 maxpool5 (0,0) reads {:?}", corner.bounding_box());
    println!("vgg16 maxpool5 (3,3) reads {:?}", centre.bounding_box());
    Ok(())
}
