//! Explains a few toy images: predicted class, top prototypes and their exact regions.

use protoloc::fixtures::{assets_dir, TOY_EMBED_NODE};
use protoloc::model::{Dataset, ModelBundle};
use protoloc::protopart::SimilarityConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = assets_dir();
    let bundle = ModelBundle::load(
        dir.join("toy/graph.json"),
        dir.join("toy/weights.ntsr"),
        dir.join("toy/bank.ntsr"),
        TOY_EMBED_NODE,
        SimilarityConfig::default(),
    )?;
    let ds = Dataset::load(dir.join("toy/dataset.ntsr"))?;
    for i in [0, 13] {
        let e = bundle.explain(&ds.images[i], 3)?;
        println!("image {i}: label {} predicted {} logits {:.3?}", ds.labels[i], e.predicted, e.logits);
        for ev in &e.evidence {
            let bbox = ev.region.project(&[1, 2]).bounding_box();
            println!(
                "  prototype {:>2} score {:.3} at {:?} -> pixels {:?} (from {:?})",
                ev.prototype, ev.score, ev.argmin, bbox, ev.provenance
            );
        }
    }
    Ok(())
}
