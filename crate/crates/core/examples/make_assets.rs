//! Regenerates the shipped graphs, toy bundle and tables under `assets/`.
//!
//! cargo run --release --example make_assets [DIR]

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(protoloc::fixtures::assets_dir);
    for path in protoloc::fixtures::write_assets(&root)? {
        println!("{}", path.display());
    }
    Ok(())
}
