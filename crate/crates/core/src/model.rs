//! A loaded model: graph, weights, prototype bank and the embedding node they meet at.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{parse_graph, GraphError, GraphIR};
use crate::inference::{forward, load_weights, InferenceError, WeightStore};
use crate::pixel_mapping::{self, KernelConfig, MappingError, Method, Region};
use crate::protopart::{
    prototype_unit, readout_sum, similarity_map, ProtoError, PrototypeBank, Provenance, SimilarityConfig,
    SimilarityMap, UnitOutput,
};
use crate::rf::{functional_rf, RFMap, RfError};
use crate::slices::SliceSet;
use crate::tensor::{self, NtsrError, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Rf(#[from] RfError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Ntsr(#[from] NtsrError),
    #[error("invalid bundle: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn read(path: &Path) -> Result<Vec<u8>, ModelError> {
    std::fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

/// Images `(N, C, H, W)` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>) -> Result<Self, ModelError> {
        if images.len() != labels.len() {
            return Err(ModelError::Invalid(format!("{} images, {} labels", images.len(), labels.len())));
        }
        if let Some(first) = images.first() {
            if first.chw().is_none() || images.iter().any(|t| t.dims() != first.dims()) {
                return Err(ModelError::Invalid("images must share one (C, H, W) shape".into()));
            }
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Reads an NTSR file holding `images` (N, C, H, W) and `labels` (N).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_bytes(&read(path.as_ref())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut c = tensor::read_container(bytes)?;
        let images = tensor::take_named(&mut c, "images")?;
        let labels = tensor::take_named(&mut c, "labels")?;
        if images.dims().len() != 4 || labels.dims() != [images.dims()[0]] {
            return Err(ModelError::Invalid(format!(
                "images {:?} / labels {:?} are not (N,C,H,W) / (N)",
                images.dims(),
                labels.dims()
            )));
        }
        let labels = labels
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(ModelError::Invalid(format!("label {v} is not a class index")))
                }
            })
            .collect::<Result<_, _>>()?;
        let images = (0..images.dims()[0]).map(|i| images.slice_outer(i)).collect();
        Self::new(images, labels)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let images = Tensor::stack(&self.images).map_err(|e| ModelError::Invalid(e.to_string()))?;
        let labels = Tensor::new(vec![self.len()], self.labels.iter().map(|&l| l as f32).collect()).unwrap();
        Ok(tensor::write_container([("images", &images), ("labels", &labels)])?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
    }
}

/// One prototype's evidence in an explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub prototype: usize,
    pub class: usize,
    pub score: f64,
    pub distance: f64,
    pub argmin: (usize, usize),
    pub region: SliceSet,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub predicted: usize,
    pub logits: Vec<f64>,
    pub evidence: Vec<Evidence>,
}

pub struct ModelBundle {
    pub graph: GraphIR,
    pub weights: WeightStore,
    pub bank: PrototypeBank,
    pub embed_node: String,
    pub sim: SimilarityConfig,
    rf: OnceLock<RFMap>,
}

impl ModelBundle {
    pub fn new(
        graph: GraphIR,
        weights: WeightStore,
        bank: PrototypeBank,
        embed_node: &str,
        sim: SimilarityConfig,
    ) -> Result<Self, ModelError> {
        let shape = graph.output_shape(embed_node)?.clone();
        let [d, hz, wz] = shape[..] else {
            return Err(ModelError::Invalid(format!("embedding `{embed_node}` has dims {shape:?}, expected (D, H, W)")));
        };
        if let Some((pd, hp, wp)) = bank.proto_shape() {
            if pd != d || hp > hz || wp > wz {
                return Err(ModelError::Invalid(format!(
                    "prototypes ({pd}, {hp}, {wp}) do not fit embedding ({d}, {hz}, {wz})"
                )));
            }
        }
        if !(sim.epsilon > 0.0) {
            return Err(ModelError::Invalid(format!("epsilon must be positive, got {}", sim.epsilon)));
        }
        weights.validate(&graph)?;
        Ok(ModelBundle { graph, weights, bank, embed_node: embed_node.to_string(), sim, rf: OnceLock::new() })
    }

    pub fn load(
        graph: impl AsRef<Path>,
        weights: impl AsRef<Path>,
        bank: impl AsRef<Path>,
        embed_node: &str,
        sim: SimilarityConfig,
    ) -> Result<Self, ModelError> {
        let g = parse_graph(&read(graph.as_ref())?)?;
        let w = load_weights(&read(weights.as_ref())?)?;
        let b = PrototypeBank::load(bank)?;
        Self::new(g, w, b, embed_node, sim)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.graph.input_shape
    }

    pub fn patch(&self) -> (usize, usize) {
        self.bank.proto_shape().map_or((1, 1), |(_, hp, wp)| (hp, wp))
    }

    /// Receptive fields, computed on first use.
    pub fn rf(&self) -> Result<&RFMap, ModelError> {
        if let Some(rf) = self.rf.get() {
            return Ok(rf);
        }
        let rf = functional_rf(&self.graph)?;
        Ok(self.rf.get_or_init(|| rf))
    }

    pub fn embed(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        Ok(forward(&self.graph, &self.weights, x, &self.embed_node)?)
    }

    pub fn similarity_map(&self, z: &Tensor, j: usize) -> Result<SimilarityMap, ModelError> {
        Ok(similarity_map(z, self.bank.proto(j), &self.sim)?)
    }

    pub fn units(&self, z: &Tensor) -> Result<Vec<UnitOutput>, ModelError> {
        self.bank.protos().iter().map(|p| Ok(prototype_unit(z, p, &self.sim)?)).collect()
    }

    pub fn logits(&self, units: &[UnitOutput]) -> Result<Vec<f64>, ModelError> {
        let scores: Vec<f64> = units.iter().map(|u| u.score).collect();
        Ok(readout_sum(&scores, self.bank.class_of(), self.bank.num_classes())?)
    }

    /// Score of prototype `j` on image `x`.
    pub fn prototype_score(&self, x: &Tensor, j: usize) -> Result<f64, ModelError> {
        Ok(prototype_unit(&self.embed(x)?, self.bank.proto(j), &self.sim)?.score)
    }

    pub fn heatmap(&self, smap: &SimilarityMap, method: Method, kernel: KernelConfig) -> Result<Tensor, ModelError> {
        let [_, h, w] = self.input_shape();
        Ok(match method {
            Method::Rf => pixel_mapping::rf_heatmap(self.rf()?, &self.embed_node, smap, kernel)?,
            Method::Upsample => pixel_mapping::upsample_heatmap(&smap.scores, smap.rows, smap.cols, h, w)?,
        })
    }

    /// Exact patch field for `rf`; top-5% box of the bicubic map for `upsample`.
    pub fn localize(&self, smap: &SimilarityMap, method: Method) -> Result<Region, ModelError> {
        Ok(match method {
            Method::Rf => Region::Rf {
                field: pixel_mapping::rf_localize(self.rf()?, &self.embed_node, smap.argmin(), smap.patch)?,
            },
            Method::Upsample => {
                let m = self.heatmap(smap, Method::Upsample, KernelConfig::default())?;
                Region::Upsample { bbox: pixel_mapping::top_percent_bbox(&m, 5.0)? }
            }
        })
    }

    /// Predicted class, logits, and the `top_k` highest-scoring prototypes of that class.
    pub fn explain(&self, x: &Tensor, top_k: usize) -> Result<Explanation, ModelError> {
        let z = self.embed(x)?;
        let units = self.units(&z)?;
        let logits = self.logits(&units)?;
        let predicted = argmax(&logits);
        let mut own: Vec<usize> = self.bank.of_class(predicted).collect();
        own.sort_by(|&a, &b| units[b].score.total_cmp(&units[a].score).then(a.cmp(&b)));
        let evidence = own
            .into_iter()
            .take(top_k)
            .map(|j| {
                let u = units[j];
                let field = pixel_mapping::rf_localize(self.rf()?, &self.embed_node, u.argmin, self.patch())?;
                Ok(Evidence {
                    prototype: j,
                    class: predicted,
                    score: u.score,
                    distance: u.distance,
                    argmin: u.argmin,
                    region: field,
                    provenance: self.bank.provenance()[j],
                })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Explanation { predicted, logits, evidence })
    }
}

/// Index of the largest value, first on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip_and_label_checks() {
        let ds = Dataset::new(vec![Tensor::full(vec![1, 2, 2], 0.5), Tensor::zeros(vec![1, 2, 2])], vec![1, 0]).unwrap();
        let back = Dataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.of_class(0), vec![1]);
        let bad = tensor::write_container([
            ("images", &Tensor::zeros(vec![1, 1, 1, 1])),
            ("labels", &Tensor::full(vec![1], 0.5)),
        ])
        .unwrap();
        assert!(Dataset::from_bytes(&bad).is_err());
    }

    #[test]
    fn argmax_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
