//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use protoloc::graph::{GraphBuilder, GraphIR, Hw, Node, Op, Window};
use protoloc::inference::{forward, WeightStore};
use protoloc::protopart::{DedupMode, Distance, PrototypeBank, SimilarityConfig};
use protoloc::rf::RFMap;
use protoloc::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn window(rng: &mut ChaCha8Rng, pool: bool) -> Window {
    let k = rng.gen_range(1..=3usize);
    let s = rng.gen_range(1..=2usize);
    let d = if pool { 1 } else { rng.gen_range(1..=2usize) };
    let p = rng.gen_range(0..=k / 2);
    Window { kernel: Hw::square(k), stride: Hw::square(s), padding: Hw::square(p), dilation: Hw::square(d) }
}

/// Random graph over a small input mixing windowed ops, skips, concats and a permute.
///
/// Nonlinearities are limited to ReLU so that, with non-negative weights and zero
/// biases, an output is non-zero exactly when its input impulse can reach it.
pub fn random_graph(seed: u64) -> GraphIR {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let c = rng.gen_range(1..=3usize);
        let hw = rng.gen_range(8..=14usize);
        let mut b = GraphBuilder::new(format!("rand{seed}"), [c, hw, hw], "input");
        let mut last = "input".to_string();
        let stages = rng.gen_range(2..=6);
        let mut flat = false;
        for s in 0..stages {
            let id = format!("n{s}");
            match rng.gen_range(0..10) {
                0 | 1 => {
                    b.push(&id, Op::Conv2d { window: window(&mut rng, false), out_channels: rng.gen_range(1..=4) }, &[&last]);
                }
                2 => {
                    b.push(&id, Op::MaxPool2d(window(&mut rng, true)), &[&last]);
                }
                3 => {
                    b.push(&id, Op::AvgPool2d(window(&mut rng, true)), &[&last]);
                }
                4 => {
                    b.push(&id, Op::Relu, &[&last]);
                }
                5 => {
                    b.push(&id, Op::BatchNorm2d { eps: 1e-5 }, &[&last]);
                }
                6 => {
                    // Same-shape residual branch.
                    let br = format!("{id}_br");
                    let out = 2;
                    let pre = format!("{id}_pre");
                    b.push(&pre, protoloc::graph::conv(1, 1, 0, out), &[&last]);
                    b.push(&br, protoloc::graph::conv(3, 1, 1, out), &[&pre]);
                    b.push(&id, Op::Add, &[&pre, &br]);
                }
                7 => {
                    let br = format!("{id}_br");
                    b.push(&br, protoloc::graph::conv(3, 1, 1, 2), &[&last]);
                    b.push(&id, Op::Concat { axis: 0 }, &[&last, &br]);
                }
                8 => {
                    b.push(&id, Op::Permute { order: vec![0, 2, 1] }, &[&last]);
                }
                _ => {
                    b.push(&id, Op::DropoutIdentity, &[&last]);
                }
            }
            last = id;
            if s == stages - 1 && rng.gen_bool(0.15) {
                b.push("flat", Op::Flatten, &[&last]);
                b.push("fc", Op::Linear { out_features: 3 }, &["flat"]);
                flat = true;
            }
        }
        let _ = flat;
        if let Ok(g) = b.build() {
            if protoloc::rf::functional_rf(&g).is_ok() {
                return g;
            }
        }
    }
}

/// Same graph with every max-pool swapped for an average pool over the same window.
pub fn with_avgpool(g: &GraphIR) -> GraphIR {
    let nodes: Vec<Node> = g
        .nodes()
        .iter()
        .map(|n| Node {
            id: n.id.clone(),
            op: match &n.op {
                Op::MaxPool2d(w) => Op::AvgPool2d(*w),
                op => op.clone(),
            },
            inputs: n.inputs.clone(),
        })
        .collect();
    GraphIR::new(g.name.clone(), g.input_shape, nodes).unwrap()
}

/// Strictly positive weights with zero biases / shifts.
pub fn positive_weights(g: &GraphIR, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WeightStore::new();
    for n in g.nodes() {
        let input_shape = || g.output_shape(&n.inputs[0]).unwrap().clone();
        match &n.op {
            Op::Conv2d { window, out_channels } => {
                let cin = input_shape()[0];
                let dims = vec![*out_channels, cin, window.kernel.h, window.kernel.w];
                w.insert(&n.id, "weight", Tensor::from_fn(dims, |_| rng.gen_range(0.1f32..1.0)));
                w.insert(&n.id, "bias", Tensor::zeros(vec![*out_channels]));
            }
            Op::BatchNorm2d { .. } => {
                let c = input_shape()[0];
                w.insert(&n.id, "weight", Tensor::from_fn(vec![c], |_| rng.gen_range(0.5f32..1.5)));
                w.insert(&n.id, "bias", Tensor::zeros(vec![c]));
                w.insert(&n.id, "running_mean", Tensor::zeros(vec![c]));
                w.insert(&n.id, "running_var", Tensor::full(vec![c], 1.0));
            }
            Op::Linear { out_features } => {
                let fan: usize = input_shape().iter().product();
                w.insert(&n.id, "weight", Tensor::from_fn(vec![*out_features, fan], |_| rng.gen_range(0.1f32..1.0)));
                w.insert(&n.id, "bias", Tensor::zeros(vec![*out_features]));
            }
            _ => {}
        }
    }
    w
}

/// For every non-input node and every output element (row-major), the set of input
/// pixels whose unit impulse makes that element non-zero.
pub fn impulse_dependencies(g: &GraphIR) -> Vec<(String, Vec<BTreeSet<(usize, usize)>>)> {
    let og = with_avgpool(g);
    let w = positive_weights(&og, 7);
    let [c, h, wd] = og.input_shape;
    let mut out: Vec<(String, Vec<BTreeSet<(usize, usize)>>)> = og
        .nodes()
        .iter()
        .filter(|n| n.op != Op::Input)
        .map(|n| (n.id.clone(), vec![BTreeSet::new(); og.output_shape(&n.id).unwrap().iter().product()]))
        .collect();
    for r in 0..h {
        for col in 0..wd {
            let mut x = Tensor::zeros(vec![c, h, wd]);
            for ch in 0..c {
                x.set(&[ch, r, col], 1.0);
            }
            for (id, deps) in out.iter_mut() {
                let y = forward(&og, &w, &x, id).unwrap();
                for (e, v) in y.data().iter().enumerate() {
                    if *v != 0.0 {
                        deps[e].insert((r, col));
                    }
                }
            }
        }
    }
    out
}

/// Spatial pixels of one element's field, addressing elements by row-major index.
pub fn field_pixels(rf: &RFMap, g: &GraphIR, id: &str, element: usize) -> BTreeSet<(usize, usize)> {
    let shape = g.output_shape(id).unwrap();
    let (c, i, j) = match shape.as_slice() {
        [_, h, w] => (element / (h * w), (element / w) % h, element % w),
        _ => (element, 0, 0),
    };
    rf.field(id, c, i, j).unwrap().points().into_iter().map(|p| (p[1], p[2])).collect()
}

/// Values of the window at `(r, c)`, read element by element.
pub fn patch_values(z: &Tensor, r: usize, c: usize, hp: usize, wp: usize) -> Vec<f32> {
    let d = z.dims()[0];
    let mut v = Vec::new();
    for ch in 0..d {
        for a in 0..hp {
            for b in 0..wp {
                v.push(z.get(&[ch, r + a, c + b]));
            }
        }
    }
    v
}

pub fn naive_distance(a: &[f32], b: &[f32], kind: Distance) -> f64 {
    match kind {
        Distance::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
            let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum();
            let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum();
            (1.0 - dot / (na * nb).sqrt()).clamp(0.0, 2.0)
        }
        Distance::L2Squared => a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum(),
    }
}

/// Greedy replacement computed from scratch: prototypes in index order, candidates by
/// (distance, image, row, col), skipping dedup keys already used within the class.
pub fn replacement_oracle(
    bank: &PrototypeBank,
    zs: &[Tensor],
    labels: &[usize],
    cfg: &SimilarityConfig,
    dedup: DedupMode,
) -> Vec<(usize, usize, usize)> {
    let (_, hp, wp) = bank.proto_shape().unwrap();
    let mut used: Vec<BTreeSet<(usize, usize, usize)>> = vec![BTreeSet::new(); bank.num_classes()];
    let mut out = Vec::new();
    for j in 0..bank.len() {
        let class = bank.class_of()[j];
        let mut best: Option<(f64, (usize, usize, usize))> = None;
        for (i, z) in zs.iter().enumerate() {
            if labels[i] != class {
                continue;
            }
            let (_, h, w) = z.chw().unwrap();
            for r in 0..=h - hp {
                for c in 0..=w - wp {
                    let key = match dedup {
                        DedupMode::Patch => (i, r, c),
                        DedupMode::Image => (i, 0, 0),
                    };
                    if used[class].contains(&key) {
                        continue;
                    }
                    let d = naive_distance(&patch_values(z, r, c, hp, wp), bank.proto(j).data(), cfg.distance);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, (i, r, c)));
                    }
                }
            }
        }
        let (_, pick) = best.expect("enough candidates");
        used[class].insert(match dedup {
            DedupMode::Patch => pick,
            DedupMode::Image => (pick.0, 0, 0),
        });
        out.push(pick);
    }
    out
}

