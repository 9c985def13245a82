//! Pixel-space heat maps and localization regions.
//!
//! The `rf` method paints each similarity score over the exact receptive field of its
//! embedded patch and keeps the element-wise maximum. The `upsample` method is the
//! bicubic baseline followed by a top-percent bounding box.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protopart::SimilarityMap;
use crate::rf::{RFMap, RfError};
use crate::slices::{HyperRect, IntervalSlice, SliceSet};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("similarity grid is {got:?}, embedding patch grid is {expected:?}")]
    GridMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("cannot interpolate a {rows}x{cols} grid to {h}x{w}")]
    DegenerateGrid { rows: usize, cols: usize, h: usize, w: usize },
    #[error("percent must lie in (0, 100], got {0}")]
    InvalidPercent(f64),
    #[error("heat map must be a non-empty 2-D tensor, got dims {0:?}")]
    NotAMap(Vec<usize>),
    #[error(transparent)]
    Rf(#[from] RfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rf,
    Upsample,
}

/// Gaussian weighting of scores inside each receptive-field box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub enabled: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { enabled: true }
    }
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    /// Midpoint `(row, col)`, possibly on a half pixel.
    pub fn center(&self) -> (f64, f64) {
        ((self.top + self.bottom) as f64 / 2.0, (self.left + self.right) as f64 / 2.0)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.top <= row && row <= self.bottom && self.left <= col && col <= self.right
    }

    /// `(channel, row, col)` set spanning all `channels`.
    pub fn to_slice_set(&self, channels: usize) -> SliceSet {
        SliceSet::from_rect(HyperRect::from_bounds(&[
            (0, channels - 1),
            (self.top, self.bottom),
            (self.left, self.right),
        ]))
    }

    /// Box of side `size` centred on `center`, clipped to an `h x w` image.
    pub fn window(center: (f64, f64), size: (usize, usize), h: usize, w: usize) -> BBox {
        let axis = |c: f64, s: usize, n: usize| {
            let lo = (c - (s as f64 - 1.0) / 2.0 + 0.5).floor() as i64;
            let hi = lo + s as i64 - 1;
            (lo.clamp(0, n as i64 - 1) as usize, hi.clamp(0, n as i64 - 1) as usize)
        };
        let (top, bottom) = axis(center.0, size.0, h);
        let (left, right) = axis(center.1, size.1, w);
        BBox { top, left, bottom, right }
    }
}

/// Where a prototype points in an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Region {
    /// Exact receptive field of the best-matching patch, `(channel, row, col)` boxes.
    Rf { field: SliceSet },
    Upsample { bbox: BBox },
}

impl Region {
    pub fn bbox(&self) -> BBox {
        match self {
            Region::Rf { field } => {
                let bb = field.bounding_box().expect("receptive fields are non-empty");
                let n = bb.slices.len();
                let (r, c) = (bb.slices[n - 2], bb.slices[n - 1]);
                BBox { top: r.lo, left: c.lo, bottom: r.hi, right: c.hi }
            }
            Region::Upsample { bbox } => *bbox,
        }
    }

    pub fn contains_pixel(&self, row: usize, col: usize) -> bool {
        match self {
            Region::Rf { field } => field.project(&[1, 2]).contains_point(&[row, col]),
            Region::Upsample { bbox } => bbox.contains(row, col),
        }
    }
}

/// Peak-normalized Gaussian over a box, `sigma = max(height, width)`, row-major.
pub fn gaussian_kernel(rows: IntervalSlice, cols: IntervalSlice) -> Vec<f64> {
    let (h, w) = (rows.len(), cols.len());
    let sigma = h.max(w) as f64;
    let (cr, cc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let g = |dr: f64, dc: f64| (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp();
    let peak = g(cr - cr.floor(), cc - cc.floor());
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            out.push(g(i as f64 - cr, j as f64 - cc) / peak);
        }
    }
    out
}

fn check_grid(rf: &RFMap, node: &str, smap: &SimilarityMap) -> Result<(), MappingError> {
    let (hz, wz) = rf.node(node)?.spatial();
    let (hp, wp) = smap.patch;
    let expected = ((hz + 1).saturating_sub(hp), (wz + 1).saturating_sub(wp));
    if expected != (smap.rows, smap.cols) {
        return Err(MappingError::GridMismatch { expected, got: (smap.rows, smap.cols) });
    }
    Ok(())
}

/// Receptive-field heat map: `M = max(M, S * T)` over every patch position.
pub fn rf_heatmap(rf: &RFMap, node: &str, smap: &SimilarityMap, kernel: KernelConfig) -> Result<Tensor, MappingError> {
    check_grid(rf, node, smap)?;
    let [_, h, w] = rf.input_shape;
    let mut m = vec![0f64; h * w];
    let (hp, wp) = smap.patch;
    for r in 0..smap.rows {
        for c in 0..smap.cols {
            let s = smap.score(r, c);
            let spatial = rf.patch_field(node, r, c, hp, wp)?.project(&[1, 2]);
            let bb = spatial.bounding_box().expect("receptive fields are non-empty");
            let (rows, cols) = (bb.slices[0], bb.slices[1]);
            let t = if kernel.enabled { gaussian_kernel(rows, cols) } else { Vec::new() };
            for rect in spatial.rects() {
                for i in rect.slices[0].lo..=rect.slices[0].hi {
                    for j in rect.slices[1].lo..=rect.slices[1].hi {
                        let weight = if kernel.enabled { t[(i - rows.lo) * cols.len() + (j - cols.lo)] } else { 1.0 };
                        let v = &mut m[i * w + j];
                        *v = v.max(s * weight);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![h, w], m.into_iter().map(|v| v as f32).collect()).unwrap())
}

/// Exact receptive field of the patch whose top-left grid position is `pos`.
pub fn rf_localize(rf: &RFMap, node: &str, pos: (usize, usize), patch: (usize, usize)) -> Result<SliceSet, MappingError> {
    Ok(rf.patch_field(node, pos.0, pos.1, patch.0, patch.1)?)
}

fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Taps `(index, weight)` for each output coordinate along one axis.
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 4]> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut taps = [(0usize, 0f64); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let idx = (base as i64 + k as i64 - 1).clamp(0, n_in as i64 - 1) as usize;
                *tap = (idx, cubic(t - (k as f64 - 1.0)));
            }
            taps
        })
        .collect()
}

/// Bicubic resize (Catmull-Rom, `a = -0.5`, half-pixel centres, edge replication).
pub fn upsample_heatmap(grid: &[f64], rows: usize, cols: usize, h: usize, w: usize) -> Result<Tensor, MappingError> {
    if rows == 0 || cols == 0 || h == 0 || w == 0 || grid.len() != rows * cols {
        return Err(MappingError::DegenerateGrid { rows, cols, h, w });
    }
    let row_taps = cubic_taps(rows, h);
    let col_taps = cubic_taps(cols, w);
    // Columns first, then rows.
    let mut tmp = vec![0f64; rows * w];
    for r in 0..rows {
        for (j, taps) in col_taps.iter().enumerate() {
            tmp[r * w + j] = taps.iter().map(|&(c, wt)| wt * grid[r * cols + c]).sum();
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for taps in &row_taps {
        for j in 0..w {
            out.push(taps.iter().map(|&(r, wt)| wt * tmp[r * w + j]).sum::<f64>() as f32);
        }
    }
    Ok(Tensor::new(vec![h, w], out).unwrap())
}

fn map_dims(m: &Tensor) -> Result<(usize, usize), MappingError> {
    match m.dims() {
        [h, w] if *h > 0 && *w > 0 => Ok((*h, *w)),
        d => Err(MappingError::NotAMap(d.to_vec())),
    }
}

/// Smallest box around the top `percent` of pixels, `k = ceil(percent/100 * H*W)`;
/// every pixel tied with the k-th largest value is included.
pub fn top_percent_bbox(m: &Tensor, percent: f64) -> Result<BBox, MappingError> {
    let (h, w) = map_dims(m)?;
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(MappingError::InvalidPercent(percent));
    }
    let n = h * w;
    // Guard against 5/100*100 = 5.000000000000001 style spill.
    let k = ((percent * n as f64 / 100.0) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted = m.data().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k - 1];
    let mut bb: Option<BBox> = None;
    for (idx, &v) in m.data().iter().enumerate() {
        if v >= threshold {
            let (r, c) = (idx / w, idx % w);
            bb = Some(match bb {
                None => BBox { top: r, left: c, bottom: r, right: c },
                Some(b) => BBox {
                    top: b.top.min(r),
                    left: b.left.min(c),
                    bottom: b.bottom.max(r),
                    right: b.right.max(c),
                },
            });
        }
    }
    Ok(bb.expect("k >= 1 pixels reach the threshold"))
}

/// 8-bit binary PGM (P5) after min-max normalization; a constant map renders black.
pub fn render_pgm(m: &Tensor) -> Result<Vec<u8>, MappingError> {
    let (h, w) = map_dims(m)?;
    let lo = m.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = m.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = hi - lo;
    out.extend(m.data().iter().map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }));
    Ok(out)
}
