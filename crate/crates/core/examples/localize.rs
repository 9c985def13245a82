//! Heat maps from exact fields versus bicubic upsampling, written as PGM files.
//!
//! `cargo run --release --example localize [OUT_DIR]`

use protoloc::fixtures::{assets_dir, TOY_EMBED_NODE};
use protoloc::model::{Dataset, ModelBundle};
use protoloc::pixel_mapping::{render_pgm, KernelConfig, Method};
use protoloc::protopart::SimilarityConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let dir = assets_dir();
    let bundle = ModelBundle::load(
        dir.join("toy/graph.json"),
        dir.join("toy/weights.ntsr"),
        dir.join("toy/bank.ntsr"),
        TOY_EMBED_NODE,
        SimilarityConfig::default(),
    )?;
    let ds = Dataset::load(dir.join("toy/dataset.ntsr"))?;
    let (image, proto) = (2, 0);
    let z = bundle.embed(&ds.images[image])?;
    let smap = bundle.similarity_map(&z, proto)?;
    println!("best patch {:?}, score {:.3}", smap.argmin(), smap.score(smap.argmin().0, smap.argmin().1));
    for method in [Method::Rf, Method::Upsample] {
        let region = bundle.localize(&smap, method)?;
        let heat = bundle.heatmap(&smap, method, KernelConfig::default())?;
        let path = out.join(format!("localize_{method:?}.pgm").to_lowercase());
        std::fs::write(&path, render_pgm(&heat)?)?;
        println!("{method:?}: region bbox {:?} -> {}", region.bbox(), path.display());
    }
    Ok(())
}
