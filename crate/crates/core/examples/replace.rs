//! Swaps every prototype for its nearest same-class training patch.

use protoloc::fixtures::{assets_dir, TOY_EMBED_NODE};
use protoloc::model::{Dataset, ModelBundle};
use protoloc::protopart::{replace_prototypes, DedupMode, SimilarityConfig};
use protoloc::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = assets_dir();
    let bundle = ModelBundle::load(
        dir.join("toy/graph.json"),
        dir.join("toy/weights.ntsr"),
        dir.join("toy/initial_bank.ntsr"),
        TOY_EMBED_NODE,
        SimilarityConfig::default(),
    )?;
    let ds = Dataset::load(dir.join("toy/dataset.ntsr"))?;
    let zs: Vec<Tensor> = ds.images.iter().map(|x| bundle.embed(x)).collect::<Result<_, _>>()?;
    for dedup in [DedupMode::Patch, DedupMode::Image] {
        let bank = replace_prototypes(&bundle.bank, &zs, &ds.labels, &bundle.sim, dedup)?;
        let sources: Vec<String> = bank
            .provenance()
            .iter()
            .flatten()
            .map(|p| format!("{}@({},{})", p.image, p.row, p.col))
            .collect();
        println!("{dedup:?}: {}", sources.join(" "));
    }
    Ok(())
}
