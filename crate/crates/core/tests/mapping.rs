//! Pixel-space mapping against brute-force recomputation.

use std::collections::BTreeSet;

use protoloc::fixtures::{toy_graph, TOY_EMBED_NODE};
use protoloc::pixel_mapping::{rf_heatmap, rf_localize, top_percent_bbox, upsample_heatmap, BBox, KernelConfig};
use protoloc::protopart::SimilarityMap;
use protoloc::rf::{functional_rf, RFMap};
use protoloc::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize, patch: (usize, usize)) -> SimilarityMap {
    let scores: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.0..14.0)).collect();
    SimilarityMap { rows, cols, patch, distances: vec![0.0; rows * cols], scores }
}

/// Pixels of the union of member-position fields of the patch at `(r, c)`.
fn patch_pixels(rf: &RFMap, r: usize, c: usize, (hp, wp): (usize, usize)) -> BTreeSet<(usize, usize)> {
    let mut px = BTreeSet::new();
    for a in 0..hp {
        for b in 0..wp {
            for p in rf.field(TOY_EMBED_NODE, 0, r + a, c + b).unwrap().points() {
                px.insert((p[1], p[2]));
            }
        }
    }
    px
}

fn brute_heatmap(rf: &RFMap, smap: &SimilarityMap, kernel: bool) -> Vec<f64> {
    let [_, h, w] = rf.input_shape;
    let mut m = vec![0f64; h * w];
    for r in 0..smap.rows {
        for c in 0..smap.cols {
            let px = patch_pixels(rf, r, c, smap.patch);
            let (r0, r1) = (px.iter().map(|p| p.0).min().unwrap(), px.iter().map(|p| p.0).max().unwrap());
            let (c0, c1) = (px.iter().map(|p| p.1).min().unwrap(), px.iter().map(|p| p.1).max().unwrap());
            let sigma = ((r1 - r0 + 1).max(c1 - c0 + 1)) as f64;
            let (cr, cc) = ((r0 + r1) as f64 / 2.0, (c0 + c1) as f64 / 2.0);
            let g = |i: usize, j: usize| {
                let (dr, dc) = (i as f64 - cr, j as f64 - cc);
                (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
            };
            let peak = (r0..=r1).flat_map(|i| (c0..=c1).map(move |j| (i, j))).map(|(i, j)| g(i, j)).fold(0.0, f64::max);
            for &(i, j) in &px {
                let t = if kernel { g(i, j) / peak } else { 1.0 };
                m[i * w + j] = m[i * w + j].max(smap.score(r, c) * t);
            }
        }
    }
    m
}

#[test]
fn heatmap_is_max_over_covering_fields() {
    let g = toy_graph();
    let rf = functional_rf(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for patch in [(1, 1), (2, 2), (1, 3)] {
        let smap = random_map(&mut rng, 9 - patch.0, 9 - patch.1, patch);
        for kernel in [false, true] {
            let got = rf_heatmap(&rf, TOY_EMBED_NODE, &smap, KernelConfig { enabled: kernel }).unwrap();
            let want = brute_heatmap(&rf, &smap, kernel);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((*a as f64 - b).abs() <= 1e-5 * b.abs().max(1.0), "patch {patch:?} kernel {kernel}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn best_patch_field_carries_the_top_score_without_kernel() {
    let g = toy_graph();
    let rf = functional_rf(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let smap = random_map(&mut rng, 8, 8, (1, 1));
    let best = smap.scores.iter().copied().fold(f64::MIN, f64::max);
    let k = smap.scores.iter().position(|&s| s == best).unwrap();
    let m = rf_heatmap(&rf, TOY_EMBED_NODE, &smap, KernelConfig { enabled: false }).unwrap();
    let field = rf_localize(&rf, TOY_EMBED_NODE, (k / 8, k % 8), (1, 1)).unwrap();
    for p in field.points() {
        assert_eq!(m.get(&[p[1], p[2]]), best as f32);
    }
    assert!(m.data().iter().all(|&v| v <= best as f32));
}

fn catmull_rom(x: f64) -> f64 {
    let x = x.abs();
    match x {
        x if x <= 1.0 => 1.5 * x.powi(3) - 2.5 * x * x + 1.0,
        x if x < 2.0 => -0.5 * x.powi(3) + 2.5 * x * x - 4.0 * x + 2.0,
        _ => 0.0,
    }
}

#[test]
fn upsampling_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (rows, cols, h, w) in [(7, 7, 224, 224), (3, 5, 17, 9), (1, 1, 4, 4), (4, 4, 4, 4), (6, 2, 5, 3)] {
        let grid: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.0..10.0)).collect();
        let m = upsample_heatmap(&grid, rows, cols, h, w).unwrap();
        let src = |o: usize, n_in: usize, n_out: usize| (o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
        for i in 0..h {
            for j in 0..w {
                let (sr, sc) = (src(i, rows, h), src(j, cols, w));
                let mut v = 0.0;
                for a in (sr.floor() as i64 - 1)..=(sr.floor() as i64 + 2) {
                    for b in (sc.floor() as i64 - 1)..=(sc.floor() as i64 + 2) {
                        let (ar, bc) = (a.clamp(0, rows as i64 - 1) as usize, b.clamp(0, cols as i64 - 1) as usize);
                        v += catmull_rom(sr - a as f64) * catmull_rom(sc - b as f64) * grid[ar * cols + bc];
                    }
                }
                assert!((m.get(&[i, j]) as f64 - v).abs() < 1e-4, "({rows}x{cols}->{h}x{w}) at ({i},{j})");
            }
        }
        if (rows, cols) == (h, w) {
            // Same size is the identity.
            for (a, b) in m.data().iter().zip(&grid) {
                assert!((*a as f64 - b).abs() < 1e-5);
            }
        }
    }
    assert!(upsample_heatmap(&[], 0, 0, 4, 4).is_err());
}

#[test]
fn top_five_percent_box_spans_both_modes() {
    // Two separated bumps of equal height: the box covers the gap between them.
    let (h, w) = (40, 40);
    let bump = |i: usize, j: usize, ci: f64, cj: f64| (-((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)) / 8.0).exp();
    let m = Tensor::from_fn(vec![h, w], |k| {
        let (i, j) = (k / w, k % w);
        (bump(i, j, 8.0, 8.0) + bump(i, j, 31.0, 31.0)) as f32
    });
    let bb = top_percent_bbox(&m, 5.0).unwrap();
    let k = (0.05f64 * (h * w) as f64).ceil() as usize;
    let mut sorted = m.data().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let thr = sorted[k - 1];
    let (mut top, mut left, mut bottom, mut right) = (h, w, 0, 0);
    for i in 0..h {
        for j in 0..w {
            if m.get(&[i, j]) >= thr {
                top = top.min(i);
                left = left.min(j);
                bottom = bottom.max(i);
                right = right.max(j);
            }
        }
    }
    assert_eq!(bb, BBox { top, left, bottom, right });
    assert!(bb.contains(8, 8) && bb.contains(31, 31) && bb.contains(20, 20));
    assert!(bb.area() > 20 * 20);
}

#[test]
fn top_percent_ties_are_all_kept() {
    let mut m = Tensor::zeros(vec![10, 10]);
    for (i, j) in [(0, 0), (9, 9), (5, 5)] {
        m.set(&[i, j], 1.0);
    }
    // 1% of 100 pixels is one pixel, but all three maxima tie.
    assert_eq!(top_percent_bbox(&m, 1.0).unwrap(), BBox { top: 0, left: 0, bottom: 9, right: 9 });
    assert!(top_percent_bbox(&m, 0.0).is_err());
}
