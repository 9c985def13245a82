//! Unions of boxes: merging, exact area and projection.

use protoloc::slices::{HyperRect, SliceSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = SliceSet::from_rects(vec![
        HyperRect::from_bounds(&[(0, 2), (0, 9), (0, 9)]),
        HyperRect::from_bounds(&[(0, 2), (5, 14), (5, 14)]),
        HyperRect::from_bounds(&[(0, 2), (2, 3), (2, 3)]),
    ])?;
    let merged = set.merge()?;
    println!("{} boxes -> {} after merge", set.rects().len(), merged.rects().len());
    println!("union area {} (sum of volumes {})", merged.union_area(), set.rects().iter().map(|r| r.volume()).sum::<u64>());
    let spatial = merged.project(&[1, 2]);
    println!("spatial footprint {} pixels, bbox {:?}", spatial.union_area(), spatial.bounding_box());
    println!("{}", serde_json::to_string(&merged)?);
    Ok(())
}
