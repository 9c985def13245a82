//! Interpretability metrics: relevance ordering test, part consistency and stability,
//! and the accuracy / receptive-field Pareto front.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, ModelBundle, ModelError};
use crate::pixel_mapping::{BBox, KernelConfig, Method};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("prototype {prototype} on image {image}: original and baseline scores are equal ({score})")]
    DegenerateNormalization { prototype: usize, image: usize, score: f64 },
    #[error("prototype {0}: no annotated part is visible in any image of its class")]
    NoVisibleParts(usize),
    #[error("no annotation for image `{0}`")]
    MissingAnnotation(String),
    #[error("invalid annotations: {0}")]
    InvalidAnnotations(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid Pareto point `{label}`: mrf {mrf}, accuracy {accuracy}")]
    InvalidPoint { label: String, mrf: f64, accuracy: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mixes a master seed with task coordinates into an independent stream seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

// ---------------------------------------------------------------- annotations

/// Centre(s) of one part; merged left/right parts may carry two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartCenters {
    One([f64; 2]),
    Many(Vec<[f64; 2]>),
}

impl PartCenters {
    pub fn points(&self) -> &[[f64; 2]] {
        match self {
            PartCenters::One(p) => std::slice::from_ref(p),
            PartCenters::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageParts {
    pub visible: Vec<bool>,
    pub centers: Vec<Option<PartCenters>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub parts: Vec<String>,
    pub images: BTreeMap<String, ImageParts>,
}

impl Annotations {
    pub fn from_json(text: &str) -> Result<Self, MetricError> {
        let a: Annotations = serde_json::from_str(text)?;
        a.validate()?;
        Ok(a)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotations serialize")
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let k = self.parts.len();
        for (id, img) in &self.images {
            if img.visible.len() != k || img.centers.len() != k {
                return Err(MetricError::InvalidAnnotations(format!("image `{id}`: expected {k} parts")));
            }
            for (p, (v, c)) in img.visible.iter().zip(&img.centers).enumerate() {
                let has_center = c.as_ref().is_some_and(|c| !c.points().is_empty());
                if *v != has_center {
                    return Err(MetricError::InvalidAnnotations(format!(
                        "image `{id}`, part `{}`: visible={v} but center {}",
                        self.parts[p],
                        if has_center { "given" } else { "missing" }
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn image(&self, id: usize) -> Result<&ImageParts, MetricError> {
        let key = id.to_string();
        self.images.get(&key).ok_or(MetricError::MissingAnnotation(key))
    }
}

/// `o_k`: visible parts with at least one centre inside `window`.
pub fn parts_in(window: &BBox, parts: &ImageParts) -> Vec<bool> {
    parts
        .centers
        .iter()
        .zip(&parts.visible)
        .map(|(c, &vis)| {
            vis && c.as_ref().is_some_and(|c| {
                c.points().iter().any(|&[r, col]| {
                    r >= 0.0 && col >= 0.0 && window.contains(r.floor() as usize, col.floor() as usize)
                })
            })
        })
        .collect()
}

// ---------------------------------------------------------------- ROT

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotConfig {
    pub method: Method,
    pub kernel: KernelConfig,
    /// Fraction of pixels restored between evaluations; 0 means every pixel.
    pub stride: f64,
    pub samples: usize,
    pub seed: u64,
    /// Uniform noise range of the baseline image; defaults to the image's own min/max.
    pub noise_range: Option<(f32, f32)>,
}

impl Default for RotConfig {
    fn default() -> Self {
        RotConfig {
            method: Method::Rf,
            kernel: KernelConfig::default(),
            stride: 0.01,
            samples: 50,
            seed: 0,
            noise_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotCurve {
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
    pub s_orig: f64,
    pub s_base: f64,
    pub ausc: f64,
    pub pct_to_recovery: Option<f64>,
}

/// Restored-pixel counts for an `n`-pixel image: multiples of `stride * n`, plus 0 and `n`.
pub fn rot_counts(n: usize, stride: f64) -> Vec<usize> {
    let mut counts: Vec<usize> = if stride <= 0.0 {
        (0..=n).collect()
    } else {
        let steps = (1.0 / stride).floor() as usize;
        (0..=steps).map(|t| ((t as f64 * stride * n as f64).round() as usize).min(n)).collect()
    };
    counts.push(n);
    counts.dedup();
    counts.sort_unstable();
    counts.dedup();
    counts
}

/// Pixel indices in descending heat order, ties by row-major index.
pub fn restore_order(heat: &Tensor) -> Vec<usize> {
    let v = heat.data();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order
}

/// Builds the curve by re-scoring the composite image at every count (the definition).
pub fn rot_curve(
    bundle: &ModelBundle,
    image: &Tensor,
    baseline: &Tensor,
    order: &[usize],
    counts: &[usize],
    prototype: usize,
    image_id: usize,
) -> Result<RotCurve, MetricError> {
    let (c, h, w) = image.chw().expect("image is (C, H, W)");
    let n = h * w;
    let s_orig = bundle.prototype_score(image, prototype)?;
    let mut comp = baseline.clone();
    let mut restored = 0;
    let mut scores = Vec::with_capacity(counts.len());
    for &k in counts {
        for &px in &order[restored..k] {
            for ch in 0..c {
                comp.data_mut()[ch * n + px] = image.data()[ch * n + px];
            }
        }
        restored = k;
        scores.push(bundle.prototype_score(&comp, prototype)?);
    }
    let s_base = scores[0];
    if s_orig == s_base {
        return Err(MetricError::DegenerateNormalization { prototype, image: image_id, score: s_orig });
    }
    let fractions: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();
    let ausc = scores.iter().map(|s| (s - s_base) / (s_orig - s_base)).sum::<f64>() / scores.len() as f64;
    let pct_to_recovery = scores.iter().position(|&s| s >= s_orig - 1e-6).map(|i| fractions[i]);
    Ok(RotCurve { fractions, scores, s_orig, s_base, ausc, pct_to_recovery })
}

/// Seeded uniform-noise image with the shape of `image`.
pub fn noise_image(image: &Tensor, range: Option<(f32, f32)>, seed: u64) -> Tensor {
    let (lo, hi) = range.unwrap_or_else(|| {
        let d = image.data();
        (d.iter().copied().fold(f32::INFINITY, f32::min), d.iter().copied().fold(f32::NEG_INFINITY, f32::max))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(image.dims().to_vec(), |_| if hi > lo { rng.gen_range(lo..hi) } else { lo })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotSummary {
    pub prototype: usize,
    pub image: usize,
    pub method: Method,
    pub samples: usize,
    pub ausc: f64,
    pub pct_to_recovery: f64,
    pub fractions: Vec<f64>,
    /// Normalized score `(s - s_base) / (s_orig - s_base)` averaged over samples.
    pub mean_curve: Vec<f64>,
}

/// Averages the test over `cfg.samples` baselines for one (image, prototype).
pub fn relevance_ordering_test(
    bundle: &ModelBundle,
    image: &Tensor,
    image_id: usize,
    prototype: usize,
    cfg: &RotConfig,
) -> Result<RotSummary, MetricError> {
    if cfg.samples == 0 || !(0.0..=1.0).contains(&cfg.stride) {
        return Err(MetricError::InvalidConfig(format!("samples {} / stride {}", cfg.samples, cfg.stride)));
    }
    let z = bundle.embed(image)?;
    let smap = bundle.similarity_map(&z, prototype)?;
    let heat = bundle.heatmap(&smap, cfg.method, cfg.kernel)?;
    let order = restore_order(&heat);
    let counts = rot_counts(order.len(), cfg.stride);
    let mut mean_curve = vec![0f64; counts.len()];
    let (mut ausc, mut pct) = (0.0, 0.0);
    let mut fractions = Vec::new();
    for s in 0..cfg.samples {
        let seed = derive_seed(cfg.seed, &[prototype as u64, image_id as u64, s as u64]);
        let base = noise_image(image, cfg.noise_range, seed);
        let curve = rot_curve(bundle, image, &base, &order, &counts, prototype, image_id)?;
        for (m, sc) in mean_curve.iter_mut().zip(&curve.scores) {
            *m += (sc - curve.s_base) / (curve.s_orig - curve.s_base);
        }
        ausc += curve.ausc;
        pct += curve.pct_to_recovery.unwrap_or(1.0);
        fractions = curve.fractions;
    }
    let n = cfg.samples as f64;
    mean_curve.iter_mut().for_each(|m| *m /= n);
    Ok(RotSummary {
        prototype,
        image: image_id,
        method: cfg.method,
        samples: cfg.samples,
        ausc: ausc / n,
        pct_to_recovery: pct / n,
        fractions,
        mean_curve,
    })
}

// ---------------------------------------------------------------- consistency / stability

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub mu: f64,
    pub sigma: f64,
    pub window: (usize, usize),
    pub method: Method,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { mu: 0.8, sigma: 0.2, window: (72, 72), method: Method::Rf }
    }
}

impl MetricConfig {
    fn check(&self) -> Result<(), MetricError> {
        if !(self.mu > 0.0 && self.mu <= 1.0) || !(self.sigma >= 0.0) || self.window.0 == 0 || self.window.1 == 0 {
            return Err(MetricError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Per-part frequency `sum_i o_ik / sum_i u_ik`; `None` for parts never visible.
pub fn part_frequencies(observations: &[(Vec<bool>, Vec<bool>)], k: usize) -> Vec<Option<f64>> {
    (0..k)
        .map(|p| {
            let seen = observations.iter().filter(|(_, u)| u[p]).count();
            let hit = observations.iter().filter(|(o, _)| o[p]).count();
            (seen > 0).then(|| hit as f64 / seen as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeConsistency {
    pub prototype: usize,
    pub class: usize,
    pub best_part: String,
    pub max_frequency: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub mu: f64,
    pub s_con: f64,
    pub soft: f64,
    pub prototypes: Vec<PrototypeConsistency>,
}

/// `o` vectors for every (prototype, class image) pair, computed from each image's
/// localization window. Index: `[prototype][k]` over `dataset.of_class(class)`.
pub fn part_observations(
    bundle: &ModelBundle,
    images: &[Tensor],
    dataset: &Dataset,
    annotations: &Annotations,
    cfg: &MetricConfig,
) -> Result<Vec<Vec<Vec<bool>>>, MetricError> {
    let [_, h, w] = bundle.input_shape();
    let embeddings: Vec<Tensor> = images.iter().map(|x| bundle.embed(x)).collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(bundle.bank.len());
    for (j, &class) in bundle.bank.class_of().iter().enumerate() {
        let mut per_image = Vec::new();
        for i in dataset.of_class(class) {
            let smap = bundle.similarity_map(&embeddings[i], j)?;
            let region = bundle.localize(&smap, cfg.method)?;
            let window = BBox::window(region.bbox().center(), cfg.window, h, w);
            per_image.push(parts_in(&window, annotations.image(i)?));
        }
        out.push(per_image);
    }
    Ok(out)
}

/// Summarizes precomputed observations into S_con and the soft score.
pub fn consistency_from(
    observations: &[Vec<Vec<bool>>],
    bundle_classes: &[usize],
    dataset: &Dataset,
    annotations: &Annotations,
    mu: f64,
) -> Result<ConsistencyReport, MetricError> {
    let k = annotations.parts.len();
    let mut prototypes = Vec::with_capacity(observations.len());
    for (j, obs) in observations.iter().enumerate() {
        let class = bundle_classes[j];
        let pairs: Vec<(Vec<bool>, Vec<bool>)> = dataset
            .of_class(class)
            .into_iter()
            .zip(obs)
            .map(|(i, o)| Ok((o.clone(), annotations.image(i)?.visible.clone())))
            .collect::<Result<_, MetricError>>()?;
        let freqs = part_frequencies(&pairs, k);
        let (best, max) = freqs
            .iter()
            .enumerate()
            .filter_map(|(p, f)| f.map(|f| (p, f)))
            .fold(None, |acc: Option<(usize, f64)>, (p, f)| match acc {
                Some((_, m)) if m >= f => acc,
                _ => Some((p, f)),
            })
            .ok_or(MetricError::NoVisibleParts(j))?;
        prototypes.push(PrototypeConsistency {
            prototype: j,
            class,
            best_part: annotations.parts[best].clone(),
            max_frequency: max,
            consistent: max >= mu,
        });
    }
    let n = prototypes.len().max(1) as f64;
    Ok(ConsistencyReport {
        mu,
        s_con: prototypes.iter().filter(|p| p.consistent).count() as f64 / n,
        soft: prototypes.iter().map(|p| p.max_frequency).sum::<f64>() / n,
        prototypes,
    })
}

pub fn consistency(
    bundle: &ModelBundle,
    dataset: &Dataset,
    annotations: &Annotations,
    cfg: &MetricConfig,
) -> Result<ConsistencyReport, MetricError> {
    cfg.check()?;
    let obs = part_observations(bundle, &dataset.images, dataset, annotations, cfg)?;
    consistency_from(&obs, bundle.bank.class_of(), dataset, annotations, cfg.mu)
}

/// Adds `N(0, sigma^2)` noise to every element; one seeded stream per image.
pub fn add_noise(image: &Tensor, sigma: f64, seed: u64) -> Tensor {
    if sigma == 0.0 {
        return image.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    out.data_mut().iter_mut().for_each(|v| *v = (*v as f64 + normal.sample(&mut rng)) as f32);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub sigma: f64,
    pub s_sta: f64,
    pub per_prototype: Vec<f64>,
}

/// Mean over prototypes of the fraction of class images whose part vector survives noise.
pub fn stability(
    bundle: &ModelBundle,
    dataset: &Dataset,
    annotations: &Annotations,
    cfg: &MetricConfig,
    seed: u64,
) -> Result<StabilityReport, MetricError> {
    cfg.check()?;
    let noisy: Vec<Tensor> = dataset
        .images
        .iter()
        .enumerate()
        .map(|(i, x)| add_noise(x, cfg.sigma, derive_seed(seed, &[i as u64])))
        .collect();
    let clean = part_observations(bundle, &dataset.images, dataset, annotations, cfg)?;
    let noised = part_observations(bundle, &noisy, dataset, annotations, cfg)?;
    let per_prototype: Vec<f64> = clean
        .iter()
        .zip(&noised)
        .map(|(a, b)| {
            let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
            if a.is_empty() { 1.0 } else { same as f64 / a.len() as f64 }
        })
        .collect();
    let s_sta = per_prototype.iter().sum::<f64>() / per_prototype.len().max(1) as f64;
    Ok(StabilityReport { sigma: cfg.sigma, s_sta, per_prototype })
}

// ---------------------------------------------------------------- Pareto

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub mrf: f64,
    pub accuracy: f64,
}

impl ParetoPoint {
    pub fn new(label: &str, mrf: f64, accuracy: f64) -> Self {
        ParetoPoint { label: label.to_string(), mrf, accuracy }
    }

    /// Smaller or equal field and higher or equal accuracy, strictly better in one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.mrf <= other.mrf
            && self.accuracy >= other.accuracy
            && (self.mrf < other.mrf || self.accuracy > other.accuracy)
    }
}

/// Non-dominated points in input order.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<usize> = (0..points.len()).collect();
    // Sweep by mrf ascending (accuracy descending on ties); a point survives iff it beats
    // every earlier accuracy, or equals the best one at the same mrf and accuracy.
    sorted.sort_by(|&a, &b| {
        points[a].mrf.total_cmp(&points[b].mrf).then(points[b].accuracy.total_cmp(&points[a].accuracy))
    });
    let mut keep = vec![false; points.len()];
    let mut best: Option<&ParetoPoint> = None;
    for &i in &sorted {
        let p = &points[i];
        let survives = match best {
            None => true,
            Some(b) => p.accuracy > b.accuracy || (p.accuracy == b.accuracy && p.mrf == b.mrf),
        };
        if survives {
            keep[i] = true;
            if best.is_none_or(|b| p.accuracy > b.accuracy) {
                best = Some(p);
            }
        }
    }
    points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p.clone()).collect()
}

/// CSV with header `label,mrf,accuracy`.
pub fn read_pareto_csv(reader: impl Read) -> Result<Vec<ParetoPoint>, MetricError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let p: ParetoPoint = row?;
        if !(0.0..=100.0).contains(&p.mrf) || !(0.0..=100.0).contains(&p.accuracy) {
            return Err(MetricError::InvalidPoint { label: p.label, mrf: p.mrf, accuracy: p.accuracy });
        }
        out.push(p);
    }
    Ok(out)
}
