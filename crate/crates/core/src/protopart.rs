//! Prototype layer: patches, distances, similarity, readout heads, replacement and losses.
//!
//! Distances and scores are computed in `f64` from `f32` embeddings.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{self, NtsrError, Tensor};

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("patch {hp}x{wp} is larger than the {hz}x{wz} embedding")]
    PatchLargerThanEmbedding { hp: usize, wp: usize, hz: usize, wz: usize },
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("prototype {prototype} (class {class}) has no unused candidate patch left")]
    InsufficientPatches { prototype: usize, class: usize },
    #[error("class {0} owns no prototypes")]
    ClassWithoutPrototypes(usize),
    #[error("invalid prototype bank: {0}")]
    InvalidBank(String),
    #[error(transparent)]
    Ntsr(#[from] NtsrError),
    #[error("bank sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("bank sidecar {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Cosine,
    L2Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `ln((d + 1) / (d + eps))`
    Original,
    /// `ln(1 / (d + eps) + 1)`
    #[default]
    Reformulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub distance: Distance,
    pub epsilon: f64,
    pub formulation: Formulation,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig { distance: Distance::Cosine, epsilon: 1e-6, formulation: Formulation::Reformulated }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_cls: f64,
    pub lambda_sep: f64,
}

/// One `D x hp x wp` window of an embedding, with its top-left grid coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub values: Tensor,
}

fn check_patch(z: &Tensor, hp: usize, wp: usize) -> Result<(usize, usize, usize), ProtoError> {
    let (d, hz, wz) = z.chw().ok_or_else(|| ProtoError::ShapeMismatch(format!("embedding dims {:?}", z.dims())))?;
    if hp == 0 || wp == 0 || hp > hz || wp > wz {
        return Err(ProtoError::PatchLargerThanEmbedding { hp, wp, hz, wz });
    }
    Ok((d, hz - hp + 1, wz - wp + 1))
}

fn patch_values(z: &Tensor, row: usize, col: usize, hp: usize, wp: usize) -> Vec<f32> {
    let (d, hz, wz) = z.chw().unwrap();
    let zd = z.data();
    let mut out = Vec::with_capacity(d * hp * wp);
    for c in 0..d {
        for a in 0..hp {
            let start = (c * hz + row + a) * wz + col;
            out.extend_from_slice(&zd[start..start + wp]);
        }
    }
    out
}

/// Sliding-window (stride 1) patches in row-major order.
pub fn patches(z: &Tensor, hp: usize, wp: usize) -> Result<Vec<Patch>, ProtoError> {
    let (d, gh, gw) = check_patch(z, hp, wp)?;
    let mut out = Vec::with_capacity(gh * gw);
    for row in 0..gh {
        for col in 0..gw {
            let values = Tensor::new(vec![d, hp, wp], patch_values(z, row, col, hp, wp)).unwrap();
            out.push(Patch { row, col, values });
        }
    }
    Ok(out)
}

/// `1 - z.p / (|z||p|)` for cosine, `|z - p|^2` for squared L2.
pub fn distance(z: &[f32], p: &[f32], kind: Distance) -> Result<f64, ProtoError> {
    if z.len() != p.len() {
        return Err(ProtoError::ShapeMismatch(format!("patch has {} values, prototype {}", z.len(), p.len())));
    }
    match kind {
        Distance::Cosine => {
            let (mut dot, mut nz, mut np) = (0f64, 0f64, 0f64);
            for (&a, &b) in z.iter().zip(p) {
                let (a, b) = (a as f64, b as f64);
                dot += a * b;
                nz += a * a;
                np += b * b;
            }
            if nz == 0.0 || np == 0.0 {
                return Err(ProtoError::ZeroVector);
            }
            // Clamp rounding spill outside [0, 2].
            Ok((1.0 - dot / (nz * np).sqrt()).clamp(0.0, 2.0))
        }
        Distance::L2Squared => Ok(z.iter().zip(p).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum()),
    }
}

/// Similarity `v(d)` in the configured formulation.
pub fn similarity(d: f64, cfg: &SimilarityConfig) -> f64 {
    let eps = cfg.epsilon;
    match cfg.formulation {
        Formulation::Original => ((d + 1.0) / (d + eps)).ln(),
        Formulation::Reformulated => (1.0 / (d + eps) + 1.0).ln(),
    }
}

/// Distances and scores of one prototype against every patch of one embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMap {
    pub rows: usize,
    pub cols: usize,
    pub patch: (usize, usize),
    pub distances: Vec<f64>,
    pub scores: Vec<f64>,
}

impl SimilarityMap {
    pub fn score(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.cols + col]
    }

    /// Row-major position of the smallest distance, first one on ties.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, d) in self.distances.iter().enumerate() {
            if *d < self.distances[best] {
                best = k;
            }
        }
        (best / self.cols, best % self.cols)
    }

    pub fn min_distance(&self) -> f64 {
        let (r, c) = self.argmin();
        self.distances[r * self.cols + c]
    }
}

fn proto_dims(p: &Tensor) -> Result<(usize, usize, usize), ProtoError> {
    p.chw().ok_or_else(|| ProtoError::ShapeMismatch(format!("prototype dims {:?}", p.dims())))
}

/// Per-patch loop; this is the reference semantics.
pub fn similarity_map(z: &Tensor, proto: &Tensor, cfg: &SimilarityConfig) -> Result<SimilarityMap, ProtoError> {
    let (d, hp, wp) = proto_dims(proto)?;
    let (dz, gh, gw) = check_patch(z, hp, wp)?;
    if d != dz {
        return Err(ProtoError::ShapeMismatch(format!("prototype depth {d}, embedding depth {dz}")));
    }
    let mut distances = Vec::with_capacity(gh * gw);
    for row in 0..gh {
        for col in 0..gw {
            distances.push(distance(&patch_values(z, row, col, hp, wp), proto.data(), cfg.distance)?);
        }
    }
    let scores = distances.iter().map(|&d| similarity(d, cfg)).collect();
    Ok(SimilarityMap { rows: gh, cols: gw, patch: (hp, wp), distances, scores })
}

/// All patch distances at once as correlations: `z.p` and patch norms come from
/// sliding sums instead of per-patch copies. Agrees with [`similarity_map`] to rounding.
pub fn distance_map_conv(z: &Tensor, proto: &Tensor, kind: Distance) -> Result<Vec<f64>, ProtoError> {
    let (d, hp, wp) = proto_dims(proto)?;
    let (dz, gh, gw) = check_patch(z, hp, wp)?;
    if d != dz {
        return Err(ProtoError::ShapeMismatch(format!("prototype depth {d}, embedding depth {dz}")));
    }
    let (_, hz, wz) = z.chw().unwrap();
    let zd = z.data();
    let pd = proto.data();
    let mut dot = vec![0f64; gh * gw];
    let mut sq = vec![0f64; gh * gw];
    for c in 0..d {
        for a in 0..hp {
            for b in 0..wp {
                let pv = pd[(c * hp + a) * wp + b] as f64;
                for r in 0..gh {
                    let row = &zd[(c * hz + r + a) * wz + b..];
                    for q in 0..gw {
                        let zv = row[q] as f64;
                        dot[r * gw + q] += zv * pv;
                        sq[r * gw + q] += zv * zv;
                    }
                }
            }
        }
    }
    let pn: f64 = pd.iter().map(|&v| v as f64 * v as f64).sum();
    dot.iter()
        .zip(&sq)
        .map(|(&dp, &zn)| match kind {
            Distance::Cosine => {
                if zn == 0.0 || pn == 0.0 {
                    Err(ProtoError::ZeroVector)
                } else {
                    Ok((1.0 - dp / (zn * pn).sqrt()).clamp(0.0, 2.0))
                }
            }
            Distance::L2Squared => Ok((zn - 2.0 * dp + pn).max(0.0)),
        })
        .collect()
}

/// Output of one prototype unit: min-pooled score and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitOutput {
    pub score: f64,
    pub distance: f64,
    pub argmin: (usize, usize),
}

pub fn prototype_unit(z: &Tensor, proto: &Tensor, cfg: &SimilarityConfig) -> Result<UnitOutput, ProtoError> {
    let map = similarity_map(z, proto, cfg)?;
    let argmin = map.argmin();
    let distance = map.min_distance();
    Ok(UnitOutput { score: similarity(distance, cfg), distance, argmin })
}

/// Class-wise summation head.
pub fn readout_sum(scores: &[f64], class_of: &[usize], num_classes: usize) -> Result<Vec<f64>, ProtoError> {
    if scores.len() != class_of.len() {
        return Err(ProtoError::ShapeMismatch(format!("{} scores for {} prototypes", scores.len(), class_of.len())));
    }
    let mut logits = vec![0f64; num_classes];
    for (&s, &c) in scores.iter().zip(class_of) {
        let slot = logits
            .get_mut(c)
            .ok_or_else(|| ProtoError::ShapeMismatch(format!("class {c} out of range for {num_classes} classes")))?;
        *slot += s;
    }
    Ok(logits)
}

/// Fully connected head `s^T W`, `W` of dims (P, C).
pub fn readout_fc(scores: &[f64], weights: &Tensor) -> Result<Vec<f64>, ProtoError> {
    let [p, c] = weights.dims() else {
        return Err(ProtoError::ShapeMismatch(format!("head weights must be 2-D, got {:?}", weights.dims())));
    };
    if *p != scores.len() {
        return Err(ProtoError::ShapeMismatch(format!("head expects {p} scores, got {}", scores.len())));
    }
    let w = weights.data();
    Ok((0..*c)
        .map(|k| scores.iter().enumerate().map(|(j, s)| s * w[j * c + k] as f64).sum())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Fc,
    Sum,
}

/// `(positive reasoning elements, positive+negative elements)` behind one class logit.
pub fn explanation_size(p: usize, c: usize, head: Head) -> (usize, usize) {
    let per_class = p / c;
    match head {
        Head::Fc => (2 * per_class, 2 * p),
        Head::Sum => (per_class, per_class),
    }
}

/// Where a replaced prototype was copied from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DedupMode {
    /// A patch `(image, row, col)` may back at most one prototype per class.
    #[default]
    Patch,
    /// An image may back at most one prototype per class.
    Image,
}

impl DedupMode {
    fn key(self, p: Provenance) -> Provenance {
        match self {
            DedupMode::Patch => p,
            DedupMode::Image => Provenance { image: p.image, row: 0, col: 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    class_of: Vec<usize>,
    provenance: Vec<Option<Provenance>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    protos: Vec<Tensor>,
    class_of: Vec<usize>,
    provenance: Vec<Option<Provenance>>,
    num_classes: usize,
}

impl PrototypeBank {
    pub fn new(protos: Vec<Tensor>, class_of: Vec<usize>, num_classes: usize) -> Result<Self, ProtoError> {
        let provenance = vec![None; protos.len()];
        Self::with_provenance(protos, class_of, provenance, num_classes)
    }

    pub fn with_provenance(
        protos: Vec<Tensor>,
        class_of: Vec<usize>,
        provenance: Vec<Option<Provenance>>,
        num_classes: usize,
    ) -> Result<Self, ProtoError> {
        if protos.len() != class_of.len() || protos.len() != provenance.len() {
            return Err(ProtoError::InvalidBank(format!(
                "{} prototypes, {} class ids, {} provenance entries",
                protos.len(),
                class_of.len(),
                provenance.len()
            )));
        }
        if let Some(first) = protos.first() {
            if first.chw().is_none() || protos.iter().any(|p| p.dims() != first.dims()) {
                return Err(ProtoError::InvalidBank("prototypes must share one (D, Hp, Wp) shape".into()));
            }
        }
        if let Some(&c) = class_of.iter().find(|&&c| c >= num_classes) {
            return Err(ProtoError::InvalidBank(format!("class id {c} out of range for {num_classes} classes")));
        }
        Ok(PrototypeBank { protos, class_of, provenance, num_classes })
    }

    pub fn len(&self) -> usize {
        self.protos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protos.is_empty()
    }

    pub fn protos(&self) -> &[Tensor] {
        &self.protos
    }

    pub fn proto(&self, j: usize) -> &Tensor {
        &self.protos[j]
    }

    pub fn class_of(&self) -> &[usize] {
        &self.class_of
    }

    pub fn provenance(&self) -> &[Option<Provenance>] {
        &self.provenance
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `(D, Hp, Wp)`; `None` for an empty bank.
    pub fn proto_shape(&self) -> Option<(usize, usize, usize)> {
        self.protos.first().and_then(Tensor::chw)
    }

    pub fn of_class(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        self.class_of.iter().enumerate().filter(move |(_, &c)| c == class).map(|(j, _)| j)
    }

    /// Writes `protos` to `path` and the JSON sidecar next to it (`.json` extension).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProtoError> {
        let path = path.as_ref();
        let stacked = if self.protos.is_empty() {
            Tensor::zeros(vec![0, 0, 0, 0])
        } else {
            Tensor::stack(&self.protos).map_err(|e| ProtoError::InvalidBank(e.to_string()))?
        };
        tensor::write_file(path, [("protos", &stacked)])?;
        let side = sidecar_path(path);
        let body = serde_json::to_string_pretty(&self.sidecar())?;
        fs::write(&side, body).map_err(|source| ProtoError::Io { path: side, source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProtoError> {
        let path = path.as_ref();
        let mut container = tensor::read_file(path)?;
        let stacked = tensor::take_named(&mut container, "protos")?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|source| ProtoError::Io { path: side, source })?;
        Self::from_parts(&stacked, &text)
    }

    /// Builds a bank from a stacked (P, D, Hp, Wp) tensor and sidecar JSON text.
    pub fn from_parts(stacked: &Tensor, sidecar_json: &str) -> Result<Self, ProtoError> {
        let side: Sidecar = serde_json::from_str(sidecar_json)?;
        if stacked.dims().len() != 4 {
            return Err(ProtoError::InvalidBank(format!("protos must be 4-D, got {:?}", stacked.dims())));
        }
        let protos: Vec<Tensor> = (0..stacked.dims()[0]).map(|j| stacked.slice_outer(j)).collect();
        let num_classes = side.num_classes.unwrap_or_else(|| side.class_of.iter().max().map_or(0, |m| m + 1));
        Self::with_provenance(protos, side.class_of, side.provenance, num_classes)
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes")
    }

    fn sidecar(&self) -> Sidecar {
        Sidecar {
            class_of: self.class_of.clone(),
            provenance: self.provenance.clone(),
            num_classes: Some(self.num_classes),
        }
    }
}

pub fn sidecar_path(bank: &Path) -> PathBuf {
    bank.with_extension("json")
}

fn candidate_order(a: &(f64, Provenance), b: &(f64, Provenance)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.image.cmp(&b.1.image))
        .then(a.1.row.cmp(&b.1.row))
        .then(a.1.col.cmp(&b.1.col))
}

/// Replaces every prototype by its most similar same-class embedded patch.
///
/// Prototypes are handled in index order. A candidate whose dedup key was already
/// taken by an earlier prototype of the same class is skipped in favour of the next
/// most similar one. Equal distances are broken by image index, then row-major patch
/// position.
pub fn replace_prototypes(
    bank: &PrototypeBank,
    embeddings: &[Tensor],
    labels: &[usize],
    cfg: &SimilarityConfig,
    dedup: DedupMode,
) -> Result<PrototypeBank, ProtoError> {
    if embeddings.len() != labels.len() {
        return Err(ProtoError::ShapeMismatch(format!("{} embeddings, {} labels", embeddings.len(), labels.len())));
    }
    let Some((_, hp, wp)) = bank.proto_shape() else {
        return Ok(bank.clone());
    };
    let mut taken: Vec<HashSet<Provenance>> = vec![HashSet::new(); bank.num_classes];
    let mut protos = Vec::with_capacity(bank.len());
    let mut provenance = Vec::with_capacity(bank.len());
    for (j, proto) in bank.protos.iter().enumerate() {
        let class = bank.class_of[j];
        let mut candidates = Vec::new();
        for (image, z) in embeddings.iter().enumerate().filter(|(i, _)| labels[*i] == class) {
            let map = similarity_map(z, proto, cfg)?;
            for (k, &d) in map.distances.iter().enumerate() {
                candidates.push((d, Provenance { image, row: k / map.cols, col: k % map.cols }));
            }
        }
        candidates.sort_by(candidate_order);
        let chosen = candidates
            .iter()
            .find(|(_, p)| !taken[class].contains(&dedup.key(*p)))
            .ok_or(ProtoError::InsufficientPatches { prototype: j, class })?
            .1;
        taken[class].insert(dedup.key(chosen));
        let z = &embeddings[chosen.image];
        let (d, _, _) = z.chw().unwrap();
        protos.push(Tensor::new(vec![d, hp, wp], patch_values(z, chosen.row, chosen.col, hp, wp)).unwrap());
        provenance.push(Some(chosen));
    }
    PrototypeBank::with_provenance(protos, bank.class_of.clone(), provenance, bank.num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub total: f64,
    pub xent: f64,
    pub cls: f64,
    pub sep: f64,
}

/// Mean softmax cross-entropy via log-sum-exp.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64, ProtoError> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(ProtoError::ShapeMismatch(format!("{} logit rows, {} labels", logits.len(), labels.len())));
    }
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let target = row.get(y).ok_or_else(|| ProtoError::ShapeMismatch(format!("label {y} out of range")))?;
        total += lse - target;
    }
    Ok(total / logits.len() as f64)
}

/// Forward evaluation of the training objective on a fixed set of samples.
///
/// The cluster term is the per-sample minimum distance to any same-class prototype,
/// averaged once over samples; the separation term is the negated average of the
/// minimum distance to any other-class prototype (0 when no such prototype exists).
pub fn evaluate_losses(
    logits: &[Vec<f64>],
    labels: &[usize],
    bank: &PrototypeBank,
    embeddings: &[Tensor],
    loss_cfg: &LossConfig,
    cfg: &SimilarityConfig,
) -> Result<Losses, ProtoError> {
    if embeddings.len() != labels.len() {
        return Err(ProtoError::ShapeMismatch(format!("{} embeddings, {} labels", embeddings.len(), labels.len())));
    }
    let xent = cross_entropy(logits, labels)?;
    let (mut cls, mut sep, mut sep_count) = (0.0, 0.0, 0usize);
    for (z, &y) in embeddings.iter().zip(labels) {
        let mut own = f64::INFINITY;
        let mut other = f64::INFINITY;
        for (j, p) in bank.protos.iter().enumerate() {
            let d = similarity_map(z, p, cfg)?.min_distance();
            if bank.class_of[j] == y {
                own = own.min(d);
            } else {
                other = other.min(d);
            }
        }
        if own.is_infinite() {
            return Err(ProtoError::ClassWithoutPrototypes(y));
        }
        cls += own;
        if other.is_finite() {
            sep += other;
            sep_count += 1;
        }
    }
    let n = embeddings.len() as f64;
    let cls = cls / n;
    let sep = if sep_count == 0 { 0.0 } else { -sep / n };
    Ok(Losses { total: xent + loss_cfg.lambda_cls * cls + loss_cfg.lambda_sep * sep, xent, cls, sep })
}
