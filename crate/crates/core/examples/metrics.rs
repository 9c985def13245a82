//! Consistency and stability on the toy bundle and the planted part detector.

use protoloc::fixtures::{assets_dir, part_detector, TOY_EMBED_NODE, TOY_PARTS};
use protoloc::metrics::{consistency, stability, Annotations, MetricConfig};
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
    let ann = Annotations::load(dir.join("toy/annotations.json"))?;
    println!("parts: {TOY_PARTS:?}");
    let cfg = MetricConfig { window: (16, 16), ..MetricConfig::default() };
    let con = consistency(&bundle, &ds, &ann, &cfg)?;
    let sta = stability(&bundle, &ds, &ann, &cfg, 0)?;
    println!("toy bundle: S_con {:.3} (soft {:.3}), S_sta {:.3}", con.s_con, con.soft, sta.s_sta);
    for p in con.prototypes.iter().take(4) {
        println!("  {p:?}");
    }
    let det = part_detector(&ds)?;
    let con = consistency(&det, &ds, &ann, &MetricConfig { window: (8, 8), ..cfg })?;
    println!("part detector: S_con {:.3}, best part {}", con.s_con, con.prototypes[0].best_part);
    Ok(())
}
