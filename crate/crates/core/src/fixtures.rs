//! Deterministic small models and data: the toy part-detection bundle and a
//! DenseNet-style block graph.
//!
//! The toy images are 3x32x32 noise fields with up to four coloured 5x5 squares
//! ("parts"). Class 0 draws from parts 0..=2, class 1 from parts 1..=3. The backbone is
//! two conv/relu/maxpool stages followed by 1x1 conv + ReLU and 1x1 conv + sigmoid,
//! giving an 8x8x8 embedding with 10x10-pixel receptive fields.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{avgpool, conv, maxpool, GraphBuilder, GraphIR, Hw, Op};
use crate::inference::WeightStore;
use crate::metrics::{Annotations, ImageParts, PartCenters};
use crate::model::{Dataset, ModelBundle, ModelError};
use crate::protopart::{replace_prototypes, DedupMode, PrototypeBank, SimilarityConfig};
use crate::tensor::Tensor;

pub const TOY_EMBED_NODE: &str = "emb";
pub const TOY_PARTS: [&str; 4] = ["crest", "wing", "tail", "spot"];
const PART_SIZE: usize = 5;
const PART_COLORS: [[f32; 3]; 4] = [[1.6, -0.8, -0.8], [-0.8, 1.6, -0.8], [-0.8, -0.8, 1.6], [1.2, 1.2, -1.2]];

pub fn toy_graph() -> GraphIR {
    let mut b = GraphBuilder::new("toy", [3, 32, 32], "input");
    b.then("conv1", conv(3, 1, 1, 8))
        .then("relu1", Op::Relu)
        .then("pool1", maxpool(2, 2))
        .then("conv2", conv(3, 1, 1, 16))
        .then("relu2", Op::Relu)
        .then("pool2", maxpool(2, 2))
        .then("add1", conv(1, 1, 0, 8))
        .then("add_relu", Op::Relu)
        .then("add2", conv(1, 1, 0, 8))
        .then(TOY_EMBED_NODE, Op::Sigmoid);
    b.build().expect("toy graph is valid")
}

/// He-normal kernels and small uniform biases for every conv of `g`.
pub fn random_weights(g: &GraphIR, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WeightStore::new();
    for node in g.nodes() {
        match &node.op {
            Op::Conv2d { window, out_channels } => {
                let cin = g.output_shape(&node.inputs[0]).expect("validated graph")[0];
                let (kh, kw) = (window.kernel.h, window.kernel.w);
                let std = (2.0 / (cin * kh * kw) as f64).sqrt();
                let normal = Normal::new(0.0, std).unwrap();
                let k = Tensor::from_fn(vec![*out_channels, cin, kh, kw], |_| normal.sample(&mut rng) as f32);
                let bias = Tensor::from_fn(vec![*out_channels], |_| rng.gen_range(-0.05f32..0.05));
                w.insert(&node.id, "weight", k);
                w.insert(&node.id, "bias", bias);
            }
            Op::BatchNorm2d { .. } => {
                let c = g.output_shape(&node.inputs[0]).expect("validated graph")[0];
                w.insert(&node.id, "weight", Tensor::from_fn(vec![c], |_| rng.gen_range(0.5f32..1.5)));
                w.insert(&node.id, "bias", Tensor::from_fn(vec![c], |_| rng.gen_range(-0.1f32..0.1)));
                w.insert(&node.id, "running_mean", Tensor::from_fn(vec![c], |_| rng.gen_range(-0.1f32..0.1)));
                w.insert(&node.id, "running_var", Tensor::from_fn(vec![c], |_| rng.gen_range(0.5f32..1.5)));
            }
            Op::Linear { out_features } => {
                let n_in: usize = g.output_shape(&node.inputs[0]).expect("validated graph").iter().product();
                let std = (1.0 / n_in as f64).sqrt();
                let normal = Normal::new(0.0, std).unwrap();
                w.insert(&node.id, "weight", Tensor::from_fn(vec![*out_features, n_in], |_| normal.sample(&mut rng) as f32));
                w.insert(&node.id, "bias", Tensor::zeros(vec![*out_features]));
            }
            _ => {}
        }
    }
    w
}

/// `per_class` images of each of the two classes, interleaved, with part annotations
/// keyed by image index.
pub fn toy_dataset(per_class: usize, seed: u64) -> (Dataset, Annotations) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.3).unwrap();
    let (h, w) = (32, 32);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut ann = BTreeMap::new();
    for i in 0..2 * per_class {
        let class = i % 2;
        let pool = if class == 0 { [0, 1, 2] } else { [1, 2, 3] };
        let mut img = Tensor::from_fn(vec![3, h, w], |_| noise.sample(&mut rng));
        let mut visible = vec![false; TOY_PARTS.len()];
        let mut centers = vec![None; TOY_PARTS.len()];
        let mut placed: Vec<(usize, usize)> = Vec::new();
        let shown: Vec<usize> = {
            let v: Vec<usize> = pool.iter().copied().filter(|_| rng.gen_bool(0.8)).collect();
            if v.is_empty() { vec![pool[rng.gen_range(0..3)]] } else { v }
        };
        for part in shown {
            // Rejection-sample a spot that keeps squares apart.
            let (r, c) = loop {
                let r = rng.gen_range(0..=h - PART_SIZE);
                let c = rng.gen_range(0..=w - PART_SIZE);
                if placed.iter().all(|&(pr, pc)| pr.abs_diff(r) > PART_SIZE + 1 || pc.abs_diff(c) > PART_SIZE + 1) {
                    break (r, c);
                }
            };
            placed.push((r, c));
            for (ch, &col) in PART_COLORS[part].iter().enumerate() {
                for a in 0..PART_SIZE {
                    for b in 0..PART_SIZE {
                        let jitter: f32 = rng.gen_range(-0.1..0.1);
                        img.set(&[ch, r + a, c + b], col + jitter);
                    }
                }
            }
            visible[part] = true;
            let half = (PART_SIZE / 2) as f64;
            centers[part] = Some(PartCenters::One([r as f64 + half, c as f64 + half]));
        }
        images.push(img);
        labels.push(class);
        ann.insert(i.to_string(), ImageParts { visible, centers });
    }
    let annotations = Annotations { parts: TOY_PARTS.iter().map(|s| s.to_string()).collect(), images: ann };
    (Dataset::new(images, labels).expect("consistent toy data"), annotations)
}

/// Everything needed to exercise the toolkit end to end.
pub struct ToyFixture {
    pub graph: GraphIR,
    pub weights: WeightStore,
    pub dataset: Dataset,
    pub annotations: Annotations,
    /// Prototypes before replacement: uniform in the sigmoid range.
    pub initial_bank: PrototypeBank,
    /// Prototypes after replacement (dedup by patch).
    pub bank: PrototypeBank,
}

pub const TOY_SEED: u64 = 20_240_917;
pub const TOY_PER_CLASS: usize = 12;
pub const TOY_PROTOS_PER_CLASS: usize = 10;

impl ToyFixture {
    pub fn generate(seed: u64) -> ToyFixture {
        let graph = toy_graph();
        let weights = random_weights(&graph, seed);
        let (dataset, annotations) = toy_dataset(TOY_PER_CLASS, seed.wrapping_add(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let d = graph.output_shape(TOY_EMBED_NODE).unwrap()[0];
        let p = 2 * TOY_PROTOS_PER_CLASS;
        let protos = (0..p).map(|_| Tensor::from_fn(vec![d, 1, 1], |_| rng.gen_range(0.0f32..1.0))).collect();
        let class_of = (0..p).map(|j| j / TOY_PROTOS_PER_CLASS).collect();
        let initial_bank = PrototypeBank::new(protos, class_of, 2).unwrap();
        let embeddings: Vec<Tensor> = dataset
            .images
            .iter()
            .map(|x| crate::inference::forward(&graph, &weights, x, TOY_EMBED_NODE).expect("toy forward"))
            .collect();
        let bank = replace_prototypes(&initial_bank, &embeddings, &dataset.labels, &SimilarityConfig::default(), DedupMode::Patch)
            .expect("toy classes have enough patches");
        ToyFixture { graph, weights, dataset, annotations, initial_bank, bank }
    }

    pub fn bundle(&self) -> Result<ModelBundle, ModelError> {
        ModelBundle::new(
            self.graph.clone(),
            self.weights.clone(),
            self.bank.clone(),
            TOY_EMBED_NODE,
            SimilarityConfig::default(),
        )
    }
}

/// Matched filter for the first toy part: channel 0 responds to its colour over a 5x5
/// window, channel 1 is a constant. A single class-0 prototype replaced from the toy
/// images lands on that part whenever it is visible.
pub fn part_detector(dataset: &Dataset) -> Result<ModelBundle, ModelError> {
    let mut b = GraphBuilder::new("part_detector", [3, 32, 32], "input");
    b.then(TOY_EMBED_NODE, conv(PART_SIZE, 1, PART_SIZE / 2, 2));
    let graph = b.build().expect("detector graph is valid");
    let mut w = WeightStore::new();
    let taps = (PART_SIZE * PART_SIZE) as f32;
    let kernel = Tensor::from_fn(vec![2, 3, PART_SIZE, PART_SIZE], |i| {
        let (o, c) = (i / (3 * PART_SIZE * PART_SIZE), (i / (PART_SIZE * PART_SIZE)) % 3);
        if o == 0 { PART_COLORS[0][c] / taps } else { 0.0 }
    });
    w.insert(TOY_EMBED_NODE, "weight", kernel);
    w.insert(TOY_EMBED_NODE, "bias", Tensor::new(vec![2], vec![0.0, 1.0]).unwrap());
    // Strong response direction; replacement snaps it to the best-matching patch.
    let seed_proto = Tensor::new(vec![2, 1, 1], vec![10.0, 1.0]).unwrap();
    let initial = PrototypeBank::new(vec![seed_proto], vec![0], 2)?;
    let embeddings: Vec<Tensor> = dataset
        .images
        .iter()
        .map(|x| crate::inference::forward(&graph, &w, x, TOY_EMBED_NODE))
        .collect::<Result<_, _>>()?;
    let sim = SimilarityConfig::default();
    let bank = replace_prototypes(&initial, &embeddings, &dataset.labels, &sim, DedupMode::Patch)?;
    ModelBundle::new(graph, w, bank, TOY_EMBED_NODE, sim)
}

/// Single-op graph whose output position `(i, j)` sees exactly pixel `(i, j)`.
pub fn identity_graph() -> GraphIR {
    let mut b = GraphBuilder::new("identity", [1, 8, 8], "input");
    b.then("id", Op::DropoutIdentity);
    b.build().expect("identity graph is valid")
}

/// Model-selection rows (label, mean receptive field %, accuracy %) of the four
/// pixel-grounded backbones.
pub const PARETO_CSV: &str = "label,mrf,accuracy
vgg13_maxpool4,9.69,75.32
vgg16_maxpool5,52.5,79.75
vgg19_maxpool5,70.4,80.10
resnext50_layer3,100,81.76
";

/// Reference graphs at 224x224, keyed by file stem.
pub fn reference_graphs() -> Vec<(&'static str, GraphIR)> {
    use crate::graph::{vgg_features, VGG11, VGG13, VGG16, VGG19};
    let g = |name: &str, cfg: &[usize], cut: usize| vgg_features(name, cfg, cut, 224).expect("reference graph is valid");
    vec![
        ("vgg11_maxpool5", g("vgg11", VGG11, 5)),
        ("vgg13_maxpool4", g("vgg13", VGG13, 4)),
        ("vgg16_maxpool5", g("vgg16", VGG16, 5)),
        ("vgg19_maxpool5", g("vgg19", VGG19, 5)),
        ("densenet_block", densenet_block()),
        ("identity", identity_graph()),
    ]
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ModelError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| ModelError::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, bytes).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

/// Writes every shipped asset under `root` and returns the written paths.
///
/// Layout: `graphs/*.json`, `toy/` (graph, weights, dataset, annotations, initial and
/// replaced banks), `detector/` (part-detector graph, weights, bank) and `backbones.csv`.
pub fn write_assets(root: &Path) -> Result<Vec<PathBuf>, ModelError> {
    let mut out = Vec::new();
    let mut put = |rel: &str, bytes: &[u8]| -> Result<(), ModelError> {
        let path = root.join(rel);
        write(&path, bytes)?;
        out.push(path);
        Ok(())
    };
    for (stem, g) in reference_graphs() {
        put(&format!("graphs/{stem}.json"), g.to_json_string().as_bytes())?;
    }
    let fx = ToyFixture::generate(TOY_SEED);
    put("toy/graph.json", fx.graph.to_json_string().as_bytes())?;
    put("toy/weights.ntsr", &fx.weights.to_bytes()?)?;
    put("toy/dataset.ntsr", &fx.dataset.to_bytes()?)?;
    put("toy/annotations.json", fx.annotations.to_json().as_bytes())?;
    let det = part_detector(&fx.dataset)?;
    put("detector/graph.json", det.graph.to_json_string().as_bytes())?;
    put("detector/weights.ntsr", &det.weights.to_bytes()?)?;
    put("backbones.csv", PARETO_CSV.as_bytes())?;
    for (rel, bank) in [("toy/initial_bank.ntsr", &fx.initial_bank), ("toy/bank.ntsr", &fx.bank), ("detector/bank.ntsr", &det.bank)] {
        let path = root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| ModelError::Io { path: dir.to_path_buf(), source })?;
        }
        bank.save(&path)?;
        out.push(crate::protopart::sidecar_path(&path));
        out.push(path);
    }
    Ok(out)
}

/// Directory of the assets shipped with the crate.
pub fn assets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

/// Two-layer dense block with a transition, on a 3x32x32 input.
pub fn densenet_block() -> GraphIR {
    let mut b = GraphBuilder::new("densenet_block", [3, 32, 32], "input");
    b.then("conv0", conv(3, 1, 1, 16))
        .then("norm0", Op::BatchNorm2d { eps: 1e-5 })
        .then("relu0", Op::Relu)
        .push("l1_norm", Op::BatchNorm2d { eps: 1e-5 }, &["relu0"])
        .then("l1_relu", Op::Relu)
        .then("l1_conv", conv(3, 1, 1, 8))
        .push("cat1", Op::Concat { axis: 0 }, &["relu0", "l1_conv"])
        .then("l2_norm", Op::BatchNorm2d { eps: 1e-5 })
        .then("l2_relu", Op::Relu)
        .then("l2_conv", conv(3, 1, 1, 8))
        .push("cat2", Op::Concat { axis: 0 }, &["relu0", "l1_conv", "l2_conv"])
        .then("trans_norm", Op::BatchNorm2d { eps: 1e-5 })
        .then("trans_relu", Op::Relu)
        .then("trans_conv", conv(1, 1, 0, 16))
        .then("trans_pool", avgpool(2, 2))
        .then("gap", Op::AdaptiveAvgPool2d { output_size: Hw::square(1) })
        .then("flat", Op::Flatten)
        .then("drop", Op::DropoutIdentity)
        .then("fc", Op::Linear { out_features: 10 });
    b.build().expect("dense block graph is valid")
}
