//! Relevance ordering test for one prototype under both mappings.

use protoloc::fixtures::{assets_dir, TOY_EMBED_NODE};
use protoloc::metrics::{relevance_ordering_test, RotConfig};
use protoloc::model::{Dataset, ModelBundle};
use protoloc::pixel_mapping::Method;
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
    let proto = 3;
    let image = bundle.bank.provenance()[proto].map_or(0, |p| p.image);
    for method in [Method::Rf, Method::Upsample] {
        let cfg = RotConfig { method, samples: 5, stride: 0.02, ..RotConfig::default() };
        let s = relevance_ordering_test(&bundle, &ds.images[image], image, proto, &cfg)?;
        let curve: Vec<String> = s.mean_curve.iter().step_by(5).map(|v| format!("{v:.2}")).collect();
        println!("{method:?}: AUSC {:.3}, %2R {:.3}, curve {}", s.ausc, s.pct_to_recovery, curve.join(" "));
    }
    Ok(())
}
