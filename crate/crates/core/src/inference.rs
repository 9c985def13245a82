//! Deterministic CPU forward pass over a [`GraphIR`].
//!
//! Parameters are looked up by `"<node id>.<param>"`:
//!
//! | op            | params                                             |
//! |---------------|----------------------------------------------------|
//! | `conv2d`      | `weight` (O, I, kh, kw), optional `bias` (O)       |
//! | `batchnorm2d` | `weight`, `bias`, `running_mean`, `running_var` (C) |
//! | `linear`      | `weight` (out, in), optional `bias` (out)          |
//!
//! Every reduction runs in a fixed order, so repeated calls are bit-identical.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::graph::{GraphError, GraphIR, Hw, Node, Op, Window};
use crate::tensor::{read_container, NtsrError, Tensor};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("node `{node}`: missing parameter `{param}`")]
    MissingWeights { node: String, param: String },
    #[error("node `{node}`: shape mismatch: {reason}")]
    ShapeMismatch { node: String, reason: String },
    #[error("node `{0}` produced a non-finite activation")]
    NonFiniteActivation(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Named parameter tensors, keyed `"<node>.<param>"`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, node: &str, param: &str, t: Tensor) {
        self.tensors.insert(format!("{node}.{param}"), t);
    }

    pub fn get(&self, node: &str, param: &str) -> Option<&Tensor> {
        self.tensors.get(&format!("{node}.{param}"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Distinct node ids that own at least one parameter.
    pub fn nodes(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.tensors.keys().filter_map(|k| k.rsplit_once('.').map(|(n, _)| n)).collect();
        v.dedup();
        v
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NtsrError> {
        crate::tensor::write_container(self.tensors.iter().map(|(k, v)| (k.as_str(), v)))
    }

    /// Checks that every parameterized node of `g` has correctly shaped parameters.
    pub fn validate(&self, g: &GraphIR) -> Result<(), InferenceError> {
        for node in g.nodes() {
            let ins: Vec<&Vec<usize>> =
                node.inputs.iter().map(|i| g.output_shape(i)).collect::<Result<_, _>>()?;
            self.check_node(node, &ins)?;
        }
        Ok(())
    }

    fn require(&self, node: &str, param: &str, dims: &[usize]) -> Result<&Tensor, InferenceError> {
        let t = self
            .get(node, param)
            .ok_or_else(|| InferenceError::MissingWeights { node: node.to_string(), param: param.to_string() })?;
        if t.dims() != dims {
            return Err(InferenceError::ShapeMismatch {
                node: node.to_string(),
                reason: format!("`{param}` has dims {:?}, expected {dims:?}", t.dims()),
            });
        }
        Ok(t)
    }

    fn optional(&self, node: &str, param: &str, dims: &[usize]) -> Result<Option<&Tensor>, InferenceError> {
        match self.get(node, param) {
            None => Ok(None),
            Some(_) => self.require(node, param, dims).map(Some),
        }
    }

    fn check_node(&self, node: &Node, ins: &[&Vec<usize>]) -> Result<(), InferenceError> {
        let id = node.id.as_str();
        match &node.op {
            Op::Conv2d { window, out_channels } => {
                let cin = ins[0][0];
                self.require(id, "weight", &[*out_channels, cin, window.kernel.h, window.kernel.w])?;
                self.optional(id, "bias", &[*out_channels])?;
            }
            Op::BatchNorm2d { .. } => {
                let c = ins[0][0];
                for p in ["weight", "bias", "running_mean", "running_var"] {
                    self.require(id, p, &[c])?;
                }
            }
            Op::Linear { out_features } => {
                self.require(id, "weight", &[*out_features, ins[0][0]])?;
                self.optional(id, "bias", &[*out_features])?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parses a weight container. Names are preserved as written.
pub fn load_weights(bytes: &[u8]) -> Result<WeightStore, NtsrError> {
    let tensors = read_container(bytes)?.into_iter().collect();
    Ok(WeightStore { tensors })
}

fn mismatch(node: &str, reason: impl Into<String>) -> InferenceError {
    InferenceError::ShapeMismatch { node: node.to_string(), reason: reason.into() }
}

fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, win: &Window, oh: usize, ow: usize) -> Tensor {
    let (cin, h, w) = x.chw().unwrap();
    let cout = weight.dims()[0];
    let (kh, kw) = (win.kernel.h, win.kernel.w);
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0f32; cout * oh * ow];
    for o in 0..cout {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        if let Some(b) = bias {
            plane.fill(b.data()[o]);
        }
        for c in 0..cin {
            let xplane = &xd[c * h * w..(c + 1) * h * w];
            for a in 0..kh {
                for b in 0..kw {
                    let wv = wd[((o * cin + c) * kh + a) * kw + b];
                    for oi in 0..oh {
                        let ii = (oi * win.stride.h + a * win.dilation.h) as isize - win.padding.h as isize;
                        if ii < 0 || ii as usize >= h {
                            continue;
                        }
                        let row = &xplane[ii as usize * w..(ii as usize + 1) * w];
                        let orow = &mut plane[oi * ow..(oi + 1) * ow];
                        for (oj, acc) in orow.iter_mut().enumerate() {
                            let jj = (oj * win.stride.w + b * win.dilation.w) as isize - win.padding.w as isize;
                            if jj >= 0 && (jj as usize) < w {
                                *acc += wv * row[jj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, oh, ow], out).unwrap()
}

fn pool2d(x: &Tensor, win: &Window, oh: usize, ow: usize, max: bool) -> Tensor {
    let (c, h, w) = x.chw().unwrap();
    let xd = x.data();
    let area = (win.kernel.h * win.kernel.w) as f32;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for oi in 0..oh {
            for oj in 0..ow {
                let mut acc = if max { f32::NEG_INFINITY } else { 0.0 };
                for a in 0..win.kernel.h {
                    let ii = (oi * win.stride.h + a * win.dilation.h) as isize - win.padding.h as isize;
                    if ii < 0 || ii as usize >= h {
                        continue;
                    }
                    for b in 0..win.kernel.w {
                        let jj = (oj * win.stride.w + b * win.dilation.w) as isize - win.padding.w as isize;
                        if jj < 0 || jj as usize >= w {
                            continue;
                        }
                        let v = plane[ii as usize * w + jj as usize];
                        if max {
                            acc = acc.max(v);
                        } else {
                            acc += v;
                        }
                    }
                }
                // Average pooling counts padded positions in the divisor.
                out.push(if max { acc } else { acc / area });
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).unwrap()
}

fn permute(x: &Tensor, order: &[usize]) -> Tensor {
    let in_dims = x.dims();
    let out_dims: Vec<usize> = order.iter().map(|&a| in_dims[a]).collect();
    let mut in_strides = vec![1usize; in_dims.len()];
    for i in (0..in_dims.len().saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_dims[i + 1];
    }
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_dims.len()];
    for _ in 0..n {
        let src: usize = idx.iter().zip(order).map(|(&i, &a)| i * in_strides[a]).sum();
        out.push(x.data()[src]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_dims[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_dims, out).unwrap()
}

fn eval_node(g: &GraphIR, w: &WeightStore, node: &Node, ins: &[&Tensor], x: &Tensor) -> Result<Tensor, InferenceError> {
    let id = node.id.as_str();
    let shape = g.output_shape(id)?;
    let out = match &node.op {
        Op::Input => x.clone(),
        Op::Conv2d { window, out_channels } => {
            let cin = ins[0].dims()[0];
            let weight = w.require(id, "weight", &[*out_channels, cin, window.kernel.h, window.kernel.w])?;
            let bias = w.optional(id, "bias", &[*out_channels])?;
            conv2d(ins[0], weight, bias, window, shape[1], shape[2])
        }
        Op::MaxPool2d(window) => pool2d(ins[0], window, shape[1], shape[2], true),
        Op::AvgPool2d(window) => pool2d(ins[0], window, shape[1], shape[2], false),
        Op::AdaptiveAvgPool2d { output_size } => {
            let (_, h, wd) = ins[0].chw().unwrap();
            let k = Hw::new(h / output_size.h, wd / output_size.w);
            let window = Window { kernel: k, stride: k, padding: Hw::square(0), dilation: Hw::square(1) };
            pool2d(ins[0], &window, shape[1], shape[2], false)
        }
        Op::Relu => map(ins[0], |v| v.max(0.0)),
        Op::Sigmoid => map(ins[0], |v| 1.0 / (1.0 + (-v).exp())),
        Op::DropoutIdentity => ins[0].clone(),
        Op::BatchNorm2d { eps } => {
            let (c, h, wd) = ins[0].chw().unwrap();
            let gamma = w.require(id, "weight", &[c])?.data();
            let beta = w.require(id, "bias", &[c])?.data();
            let mean = w.require(id, "running_mean", &[c])?.data();
            let var = w.require(id, "running_var", &[c])?.data();
            let eps = *eps as f32;
            let mut out = ins[0].clone();
            for (ch, plane) in out.data_mut().chunks_mut(h * wd).enumerate() {
                let denom = (var[ch] + eps).sqrt();
                for v in plane {
                    *v = gamma[ch] * (*v - mean[ch]) / denom + beta[ch];
                }
            }
            out
        }
        Op::Linear { out_features } => {
            let n_in = ins[0].len();
            let weight = w.require(id, "weight", &[*out_features, n_in])?.data();
            let bias = w.optional(id, "bias", &[*out_features])?;
            let xin = ins[0].data();
            let out = (0..*out_features)
                .map(|o| {
                    let row = &weight[o * n_in..(o + 1) * n_in];
                    let mut acc = bias.map_or(0.0, |b| b.data()[o]);
                    for (a, b) in row.iter().zip(xin) {
                        acc += a * b;
                    }
                    acc
                })
                .collect();
            Tensor::new(vec![*out_features], out).unwrap()
        }
        Op::Add => {
            let mut out = ins[0].clone();
            for t in &ins[1..] {
                for (a, b) in out.data_mut().iter_mut().zip(t.data()) {
                    *a += b;
                }
            }
            out
        }
        Op::Concat { .. } => {
            let data = ins.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::new(shape.clone(), data).map_err(|e| mismatch(id, e.to_string()))?
        }
        Op::Flatten => ins[0].clone().reshape(shape.clone()).map_err(|e| mismatch(id, e.to_string()))?,
        Op::Permute { order } => permute(ins[0], order),
    };
    if out.dims() != shape.as_slice() {
        return Err(mismatch(id, format!("produced {:?}, graph says {shape:?}", out.dims())));
    }
    if !out.all_finite() {
        return Err(InferenceError::NonFiniteActivation(id.to_string()));
    }
    Ok(out)
}

fn map(t: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

/// Output of node `upto` for input image `x`.
pub fn forward(g: &GraphIR, w: &WeightStore, x: &Tensor, upto: &str) -> Result<Tensor, InferenceError> {
    if x.dims() != g.input_shape {
        return Err(mismatch(
            &g.input_node().id,
            format!("input has dims {:?}, graph expects {:?}", x.dims(), g.input_shape),
        ));
    }
    if !x.all_finite() {
        return Err(InferenceError::NonFiniteActivation(g.input_node().id.clone()));
    }
    let needed = g.ancestors(upto)?;
    let sorted = g.topo_sort()?;
    // Remaining consumer counts let intermediate activations be dropped early.
    let mut uses: HashMap<&str, usize> = HashMap::new();
    for n in sorted.nodes().iter().filter(|n| needed.contains(&n.id)) {
        for i in &n.inputs {
            *uses.entry(i.as_str()).or_default() += 1;
        }
    }
    let mut acts: HashMap<String, Tensor> = HashMap::new();
    for node in sorted.nodes().iter().filter(|n| needed.contains(&n.id)) {
        let out = {
            let ins: Vec<&Tensor> = node.inputs.iter().map(|i| &acts[i]).collect();
            eval_node(g, w, node, &ins, x)?
        };
        for i in &node.inputs {
            let left = uses.get_mut(i.as_str()).unwrap();
            *left -= 1;
            if *left == 0 && i != upto {
                acts.remove(i);
            }
        }
        acts.insert(node.id.clone(), out);
    }
    Ok(acts.remove(upto).expect("target evaluated"))
}

/// [`forward`] applied to each image independently, order preserved.
pub fn forward_batch(g: &GraphIR, w: &WeightStore, xs: &[Tensor], upto: &str) -> Result<Vec<Tensor>, InferenceError> {
    xs.iter().map(|x| forward(g, w, x, upto)).collect()
}
