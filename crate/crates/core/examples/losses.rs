//! Training objective terms on the toy bundle, for a few auxiliary weights.

use protoloc::fixtures::{assets_dir, TOY_EMBED_NODE};
use protoloc::model::{Dataset, ModelBundle};
use protoloc::protopart::{evaluate_losses, LossConfig, SimilarityConfig};
use protoloc::tensor::Tensor;

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
    let zs: Vec<Tensor> = ds.images.iter().map(|x| bundle.embed(x)).collect::<Result<_, _>>()?;
    let logits: Vec<Vec<f64>> = zs.iter().map(|z| bundle.logits(&bundle.units(z)?)).collect::<Result<_, _>>()?;
    for (lc, ls) in [(0.0, 0.0), (0.8, -0.08)] {
        let cfg = LossConfig { lambda_cls: lc, lambda_sep: ls };
        let l = evaluate_losses(&logits, &ds.labels, &bundle.bank, &zs, &cfg, &bundle.sim)?;
        println!("lambda_cls {lc}, lambda_sep {ls}: {l:?}");
    }
    Ok(())
}
