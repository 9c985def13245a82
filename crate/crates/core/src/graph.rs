//! Model computation graph: parsing, validation, shape inference and
//! deterministic topological ordering.
//!
//! Graphs are exchanged as JSON:
//!
//! ```json
//! {"name": "tiny", "input_shape": [3, 32, 32],
//!  "nodes": [{"id": "x", "op": "input", "attrs": {}, "inputs": []},
//!            {"id": "c1", "op": "conv2d", "attrs": {"kernel": [5, 5], "out_channels": 8}, "inputs": ["x"]}]}
//! ```
//!
//! Spatial attributes (`kernel`, `stride`, `padding`, `dilation`, `output_size`) accept
//! either a single integer or an `[h, w]` pair and are always written back as pairs.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub type Shape = Vec<usize>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("malformed graph: {0}")]
    MalformedGraph(String),
    #[error("cycle detected through nodes {0:?}")]
    CycleDetected(Vec<String>),
    #[error("node `{node}`: unknown op `{op}`")]
    UnknownOp { node: String, op: String },
    #[error("node `{node}`: shape mismatch: {reason}")]
    ShapeMismatch { node: String, reason: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

impl GraphError {
    /// Node the error is about, when there is one.
    pub fn node(&self) -> Option<&str> {
        match self {
            GraphError::UnknownOp { node, .. } | GraphError::ShapeMismatch { node, .. } => Some(node),
            GraphError::UnknownNode(node) => Some(node),
            GraphError::CycleDetected(nodes) => nodes.first().map(String::as_str),
            GraphError::MalformedGraph(_) => None,
        }
    }
}

/// A (height, width) pair of spatial hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hw {
    pub h: usize,
    pub w: usize,
}

impl Hw {
    pub const fn new(h: usize, w: usize) -> Self {
        Hw { h, w }
    }

    pub const fn square(n: usize) -> Self {
        Hw { h: n, w: n }
    }

    fn to_json(self) -> Value {
        Value::from(vec![self.h, self.w])
    }
}

/// Sliding-window hyper-parameters shared by convolution and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: Hw,
    pub stride: Hw,
    pub padding: Hw,
    pub dilation: Hw,
}

impl Window {
    /// Output extent along one axis, or `None` when the window does not fit.
    fn out_len(input: usize, k: usize, s: usize, p: usize, d: usize) -> Option<usize> {
        let span = d * (k - 1) + 1;
        let padded = input + 2 * p;
        if padded < span {
            return None;
        }
        Some((padded - span) / s + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            Self::out_len(h, self.kernel.h, self.stride.h, self.padding.h, self.dilation.h)?,
            Self::out_len(w, self.kernel.w, self.stride.w, self.padding.w, self.dilation.w)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv2d { window: Window, out_channels: usize },
    MaxPool2d(Window),
    AvgPool2d(Window),
    AdaptiveAvgPool2d { output_size: Hw },
    Relu,
    Sigmoid,
    BatchNorm2d { eps: f64 },
    Linear { out_features: usize },
    Add,
    Concat { axis: usize },
    Flatten,
    Permute { order: Vec<usize> },
    DropoutIdentity,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d(_) => "maxpool2d",
            Op::AvgPool2d(_) => "avgpool2d",
            Op::AdaptiveAvgPool2d { .. } => "adaptive_avgpool2d",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::BatchNorm2d { .. } => "batchnorm2d",
            Op::Linear { .. } => "linear",
            Op::Add => "add",
            Op::Concat { .. } => "concat",
            Op::Flatten => "flatten",
            Op::Permute { .. } => "permute",
            Op::DropoutIdentity => "dropout_identity",
        }
    }

    /// Whether the op carries learned parameters in a weight store.
    pub fn has_parameters(&self) -> bool {
        matches!(self, Op::Conv2d { .. } | Op::BatchNorm2d { .. } | Op::Linear { .. })
    }

    fn attrs_json(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let put_window = |m: &mut Map<String, Value>, w: &Window| {
            m.insert("kernel".into(), w.kernel.to_json());
            m.insert("stride".into(), w.stride.to_json());
            m.insert("padding".into(), w.padding.to_json());
            m.insert("dilation".into(), w.dilation.to_json());
        };
        match self {
            Op::Conv2d { window, out_channels } => {
                put_window(&mut m, window);
                m.insert("out_channels".into(), Value::from(*out_channels));
            }
            Op::MaxPool2d(w) | Op::AvgPool2d(w) => put_window(&mut m, w),
            Op::AdaptiveAvgPool2d { output_size } => {
                m.insert("output_size".into(), output_size.to_json());
            }
            Op::BatchNorm2d { eps } => {
                m.insert("eps".into(), Value::from(*eps));
            }
            Op::Linear { out_features } => {
                m.insert("out_features".into(), Value::from(*out_features));
            }
            Op::Concat { axis } => {
                m.insert("axis".into(), Value::from(*axis));
            }
            Op::Permute { order } => {
                m.insert("order".into(), Value::from(order.clone()));
            }
            Op::Input | Op::Relu | Op::Sigmoid | Op::Add | Op::Flatten | Op::DropoutIdentity => {}
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: Op,
    pub inputs: Vec<String>,
}

/// A validated, shape-annotated computation graph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphIR {
    pub name: String,
    /// (channels, height, width) of the image fed to the input node.
    pub input_shape: [usize; 3],
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    shapes: HashMap<String, Shape>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    name: String,
    input_shape: [usize; 3],
    nodes: Vec<RawNode>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    op: String,
    #[serde(default)]
    attrs: Map<String, Value>,
    #[serde(default)]
    inputs: Vec<String>,
}

/// Reads typed attributes out of a raw attr map, tracking which keys were consumed.
struct AttrReader<'a> {
    node: &'a str,
    attrs: &'a Map<String, Value>,
    seen: Vec<&'static str>,
}

impl<'a> AttrReader<'a> {
    fn new(node: &'a str, attrs: &'a Map<String, Value>) -> Self {
        AttrReader { node, attrs, seen: Vec::new() }
    }

    fn bad(&self, key: &str, what: &str) -> GraphError {
        GraphError::MalformedGraph(format!("node `{}`: attr `{key}` {what}", self.node))
    }

    fn uint(&mut self, key: &'static str) -> Result<Option<usize>, GraphError> {
        self.seen.push(key);
        match self.attrs.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| self.bad(key, "must be a non-negative integer")),
        }
    }

    fn float(&mut self, key: &'static str) -> Result<Option<f64>, GraphError> {
        self.seen.push(key);
        match self.attrs.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| self.bad(key, "must be a number")),
        }
    }

    fn pair(&mut self, key: &'static str) -> Result<Option<Hw>, GraphError> {
        self.seen.push(key);
        let Some(v) = self.attrs.get(key) else {
            return Ok(None);
        };
        if let Some(x) = v.as_u64() {
            return Ok(Some(Hw::square(x as usize)));
        }
        match v.as_array().map(|a| a.iter().map(Value::as_u64).collect::<Option<Vec<_>>>()) {
            Some(Some(xs)) if xs.len() == 2 => Ok(Some(Hw::new(xs[0] as usize, xs[1] as usize))),
            _ => Err(self.bad(key, "must be an integer or an [h, w] pair")),
        }
    }

    fn uint_list(&mut self, key: &'static str) -> Result<Option<Vec<usize>>, GraphError> {
        self.seen.push(key);
        let Some(v) = self.attrs.get(key) else {
            return Ok(None);
        };
        v.as_array()
            .and_then(|a| a.iter().map(|x| x.as_u64().map(|u| u as usize)).collect())
            .map(Some)
            .ok_or_else(|| self.bad(key, "must be a list of non-negative integers"))
    }

    fn required<T>(&self, key: &'static str, v: Option<T>) -> Result<T, GraphError> {
        v.ok_or_else(|| self.bad(key, "is required"))
    }

    fn window(&mut self, stride_defaults_to_kernel: bool) -> Result<Window, GraphError> {
        let kernel = self.pair("kernel")?;
        let kernel = self.required("kernel", kernel)?;
        let stride = self
            .pair("stride")?
            .unwrap_or(if stride_defaults_to_kernel { kernel } else { Hw::square(1) });
        let padding = self.pair("padding")?.unwrap_or(Hw::square(0));
        let dilation = self.pair("dilation")?.unwrap_or(Hw::square(1));
        for (name, v) in [("kernel", kernel), ("stride", stride), ("dilation", dilation)] {
            if v.h == 0 || v.w == 0 {
                return Err(GraphError::MalformedGraph(format!(
                    "node `{}`: {name} must be >= 1",
                    self.node
                )));
            }
        }
        Ok(Window { kernel, stride, padding, dilation })
    }

    fn finish(self) -> Result<(), GraphError> {
        for key in self.attrs.keys() {
            if !self.seen.contains(&key.as_str()) {
                return Err(GraphError::MalformedGraph(format!(
                    "node `{}`: unknown attr `{key}`",
                    self.node
                )));
            }
        }
        Ok(())
    }
}

fn parse_op(id: &str, op: &str, attrs: &Map<String, Value>) -> Result<Op, GraphError> {
    let mut r = AttrReader::new(id, attrs);
    let op = match op {
        "input" => Op::Input,
        "conv2d" => {
            let window = r.window(false)?;
            let out = r.uint("out_channels")?;
            let out_channels = r.required("out_channels", out)?;
            if out_channels == 0 {
                return Err(r.bad("out_channels", "must be >= 1"));
            }
            Op::Conv2d { window, out_channels }
        }
        "maxpool2d" => Op::MaxPool2d(r.window(true)?),
        "avgpool2d" => Op::AvgPool2d(r.window(true)?),
        "adaptive_avgpool2d" => {
            let size = r.pair("output_size")?;
            let output_size = r.required("output_size", size)?;
            if output_size.h == 0 || output_size.w == 0 {
                return Err(r.bad("output_size", "must be >= 1"));
            }
            Op::AdaptiveAvgPool2d { output_size }
        }
        "relu" => Op::Relu,
        "sigmoid" => Op::Sigmoid,
        "batchnorm2d" => {
            let eps = r.float("eps")?.unwrap_or(1e-5);
            if !(eps > 0.0) {
                return Err(r.bad("eps", "must be > 0"));
            }
            Op::BatchNorm2d { eps }
        }
        "linear" => {
            let out = r.uint("out_features")?;
            Op::Linear { out_features: r.required("out_features", out)? }
        }
        "add" => Op::Add,
        "concat" => Op::Concat { axis: r.uint("axis")?.unwrap_or(0) },
        "flatten" => Op::Flatten,
        "permute" => {
            let order = r.uint_list("order")?;
            Op::Permute { order: r.required("order", order)? }
        }
        "dropout_identity" => {
            // Probability is accepted for provenance but unused at inference.
            r.float("p")?;
            Op::DropoutIdentity
        }
        other => {
            return Err(GraphError::UnknownOp { node: id.to_string(), op: other.to_string() })
        }
    };
    r.finish()?;
    Ok(op)
}

fn mismatch(node: &str, reason: impl Into<String>) -> GraphError {
    GraphError::ShapeMismatch { node: node.to_string(), reason: reason.into() }
}

fn infer_shape(node: &Node, inputs: &[&Shape], input_shape: [usize; 3]) -> Result<Shape, GraphError> {
    let id = node.id.as_str();
    let arity = |n: usize| -> Result<(), GraphError> {
        if inputs.len() != n {
            return Err(mismatch(id, format!("expected {n} input(s), got {}", inputs.len())));
        }
        Ok(())
    };
    let image = |s: &Shape| -> Result<[usize; 3], GraphError> {
        match s.as_slice() {
            [c, h, w] => Ok([*c, *h, *w]),
            _ => Err(mismatch(id, format!("expected a (C, H, W) input, got {s:?}"))),
        }
    };
    match &node.op {
        Op::Input => {
            arity(0)?;
            Ok(input_shape.to_vec())
        }
        Op::Conv2d { window, out_channels } => {
            arity(1)?;
            let [_, h, w] = image(inputs[0])?;
            let (oh, ow) = window
                .output_hw(h, w)
                .ok_or_else(|| mismatch(id, format!("kernel does not fit {h}x{w} input")))?;
            Ok(vec![*out_channels, oh, ow])
        }
        Op::MaxPool2d(window) | Op::AvgPool2d(window) => {
            arity(1)?;
            let [c, h, w] = image(inputs[0])?;
            if window.padding.h * 2 > window.kernel.h || window.padding.w * 2 > window.kernel.w {
                return Err(mismatch(id, "pool padding must be at most half the kernel"));
            }
            let (oh, ow) = window
                .output_hw(h, w)
                .ok_or_else(|| mismatch(id, format!("kernel does not fit {h}x{w} input")))?;
            Ok(vec![c, oh, ow])
        }
        Op::AdaptiveAvgPool2d { output_size } => {
            arity(1)?;
            let [c, h, w] = image(inputs[0])?;
            if h % output_size.h != 0 || w % output_size.w != 0 {
                return Err(mismatch(
                    id,
                    format!("adaptive pool target {}x{} must divide {h}x{w}", output_size.h, output_size.w),
                ));
            }
            Ok(vec![c, output_size.h, output_size.w])
        }
        Op::Relu | Op::Sigmoid | Op::DropoutIdentity => {
            arity(1)?;
            Ok(inputs[0].clone())
        }
        Op::BatchNorm2d { .. } => {
            arity(1)?;
            image(inputs[0])?;
            Ok(inputs[0].clone())
        }
        Op::Linear { out_features } => {
            arity(1)?;
            if inputs[0].len() != 1 {
                return Err(mismatch(id, format!("linear expects a flat input, got {:?}", inputs[0])));
            }
            Ok(vec![*out_features])
        }
        Op::Add => {
            if inputs.len() < 2 {
                return Err(mismatch(id, "add needs at least two inputs"));
            }
            if inputs.iter().any(|s| *s != inputs[0]) {
                return Err(mismatch(id, format!("add operands differ: {inputs:?}")));
            }
            Ok(inputs[0].clone())
        }
        Op::Concat { axis } => {
            if *axis != 0 {
                return Err(mismatch(id, "concat is only supported along the channel axis"));
            }
            if inputs.is_empty() {
                return Err(mismatch(id, "concat needs at least one input"));
            }
            let first = image(inputs[0])?;
            let mut channels = 0;
            for s in inputs {
                let [c, h, w] = image(s)?;
                if (h, w) != (first[1], first[2]) {
                    return Err(mismatch(id, format!("concat spatial extents differ: {inputs:?}")));
                }
                channels += c;
            }
            Ok(vec![channels, first[1], first[2]])
        }
        Op::Flatten => {
            arity(1)?;
            Ok(vec![inputs[0].iter().product()])
        }
        Op::Permute { order } => {
            arity(1)?;
            let s = inputs[0];
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if order.len() != s.len() || sorted.iter().enumerate().any(|(i, &x)| i != x) {
                return Err(mismatch(id, format!("order {order:?} is not a permutation of rank {}", s.len())));
            }
            Ok(order.iter().map(|&a| s[a]).collect())
        }
    }
}

/// Kahn's algorithm; among ready nodes the lexicographically smallest id goes first.
fn kahn_order(nodes: &[Node], index: &HashMap<String, usize>) -> Result<Vec<usize>, GraphError> {
    let mut indegree = vec![0usize; nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for inp in &n.inputs {
            let j = *index.get(inp).ok_or_else(|| GraphError::UnknownNode(inp.clone()))?;
            indegree[i] += 1;
            consumers[j].push(i);
        }
    }
    let mut ready: BTreeSet<(&str, usize)> = nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| indegree[*i] == 0)
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(first) = ready.pop_first() {
        let i = first.1;
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert((nodes[c].id.as_str(), c));
            }
        }
    }
    if order.len() != nodes.len() {
        let mut stuck: Vec<String> =
            (0..nodes.len()).filter(|i| indegree[*i] > 0).map(|i| nodes[i].id.clone()).collect();
        stuck.sort();
        return Err(GraphError::CycleDetected(stuck));
    }
    Ok(order)
}

impl GraphIR {
    /// Builds and validates a graph from already-typed nodes.
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], nodes: Vec<Node>) -> Result<Self, GraphError> {
        if input_shape.contains(&0) {
            return Err(GraphError::MalformedGraph(format!("input_shape {input_shape:?} has a zero extent")));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::MalformedGraph(format!("duplicate node id `{}`", n.id)));
            }
        }
        let inputs: Vec<&Node> = nodes.iter().filter(|n| n.op == Op::Input).collect();
        if inputs.len() != 1 {
            return Err(GraphError::MalformedGraph(format!(
                "expected exactly one input node, found {}",
                inputs.len()
            )));
        }
        let order = kahn_order(&nodes, &index)?;
        let mut shapes: HashMap<String, Shape> = HashMap::with_capacity(nodes.len());
        for &i in &order {
            let node = &nodes[i];
            let ins: Vec<&Shape> = node.inputs.iter().map(|id| &shapes[id]).collect();
            let shape = infer_shape(node, &ins, input_shape)?;
            shapes.insert(node.id.clone(), shape);
        }
        Ok(GraphIR { name: name.into(), input_shape, nodes, index, shapes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Result<&Node, GraphError> {
        self.index
            .get(id)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn input_node(&self) -> &Node {
        self.nodes.iter().find(|n| n.op == Op::Input).expect("validated graph has an input node")
    }

    pub fn output_shape(&self, id: &str) -> Result<&Shape, GraphError> {
        self.shapes.get(id).ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    /// Returns a copy with nodes in dependency order (ties broken by id).
    pub fn topo_sort(&self) -> Result<GraphIR, GraphError> {
        let order = kahn_order(&self.nodes, &self.index)?;
        let nodes: Vec<Node> = order.iter().map(|&i| self.nodes[i].clone()).collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        Ok(GraphIR {
            name: self.name.clone(),
            input_shape: self.input_shape,
            nodes,
            index,
            shapes: self.shapes.clone(),
        })
    }

    /// True when every node appears after all of its inputs.
    pub fn is_topologically_sorted(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, n)| n.inputs.iter().all(|inp| self.index[inp] < i))
    }

    /// Ids of `target` and all of its ancestors, in graph order.
    pub fn ancestors(&self, target: &str) -> Result<Vec<String>, GraphError> {
        let start = *self.index.get(target).ok_or_else(|| GraphError::UnknownNode(target.to_string()))?;
        let mut keep = vec![false; self.nodes.len()];
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut keep[i], true) {
                continue;
            }
            stack.extend(self.nodes[i].inputs.iter().map(|id| self.index[id]));
        }
        Ok(self.nodes.iter().zip(keep).filter(|(_, k)| *k).map(|(n, _)| n.id.clone()).collect())
    }

    pub fn from_json_str(text: &str) -> Result<Self, GraphError> {
        parse_graph(text.as_bytes())
    }

    pub fn to_json_value(&self) -> Value {
        let raw = RawGraph {
            name: self.name.clone(),
            input_shape: self.input_shape,
            nodes: self
                .nodes
                .iter()
                .map(|n| RawNode {
                    id: n.id.clone(),
                    op: n.op.name().to_string(),
                    attrs: n.op.attrs_json(),
                    inputs: n.inputs.clone(),
                })
                .collect(),
        };
        serde_json::to_value(raw).expect("graph serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("graph serializes")
    }
}

/// Parses and validates a graph from its JSON bytes.
pub fn parse_graph(bytes: &[u8]) -> Result<GraphIR, GraphError> {
    let raw: RawGraph =
        serde_json::from_slice(bytes).map_err(|e| GraphError::MalformedGraph(e.to_string()))?;
    let nodes = raw
        .nodes
        .iter()
        .map(|n| {
            Ok(Node { id: n.id.clone(), op: parse_op(&n.id, &n.op, &n.attrs)?, inputs: n.inputs.clone() })
        })
        .collect::<Result<Vec<_>, GraphError>>()?;
    GraphIR::new(raw.name, raw.input_shape, nodes)
}

/// Small builder used by tests, examples and the toy fixture generator.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    name: String,
    input_shape: [usize; 3],
    nodes: Vec<Node>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], input_id: &str) -> Self {
        GraphBuilder {
            name: name.into(),
            input_shape,
            nodes: vec![Node { id: input_id.to_string(), op: Op::Input, inputs: vec![] }],
        }
    }

    pub fn push(&mut self, id: &str, op: Op, inputs: &[&str]) -> &mut Self {
        self.nodes.push(Node {
            id: id.to_string(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    /// Appends `op` fed by the most recently added node.
    pub fn then(&mut self, id: &str, op: Op) -> &mut Self {
        let prev = self.nodes.last().expect("builder has an input node").id.clone();
        self.push(id, op, &[prev.as_str()])
    }

    pub fn build(&self) -> Result<GraphIR, GraphError> {
        GraphIR::new(self.name.clone(), self.input_shape, self.nodes.clone())
    }
}

pub fn conv(k: usize, s: usize, p: usize, out_channels: usize) -> Op {
    Op::Conv2d {
        window: Window {
            kernel: Hw::square(k),
            stride: Hw::square(s),
            padding: Hw::square(p),
            dilation: Hw::square(1),
        },
        out_channels,
    }
}

pub fn maxpool(k: usize, s: usize) -> Op {
    Op::MaxPool2d(Window {
        kernel: Hw::square(k),
        stride: Hw::square(s),
        padding: Hw::square(0),
        dilation: Hw::square(1),
    })
}

pub fn avgpool(k: usize, s: usize) -> Op {
    Op::AvgPool2d(Window {
        kernel: Hw::square(k),
        stride: Hw::square(s),
        padding: Hw::square(0),
        dilation: Hw::square(1),
    })
}

/// VGG-style `features` stack truncated after the `cut_after_pool`-th max-pool.
///
/// `cfg` uses the usual convention: a number is a 3x3 same-padded conv with that many
/// output channels followed by ReLU, `0` is a 2x2/2 max-pool.
pub fn vgg_features(name: &str, cfg: &[usize], cut_after_pool: usize, hw: usize) -> Result<GraphIR, GraphError> {
    let mut b = GraphBuilder::new(name, [3, hw, hw], "input");
    let (mut block, mut idx, mut pools) = (1, 1, 0);
    for &c in cfg {
        if c == 0 {
            pools += 1;
            b.then(&format!("maxpool{block}"), maxpool(2, 2));
            if pools == cut_after_pool {
                break;
            }
            block += 1;
            idx = 1;
        } else {
            b.then(&format!("conv{block}_{idx}"), conv(3, 1, 1, c));
            b.then(&format!("relu{block}_{idx}"), Op::Relu);
            idx += 1;
        }
    }
    b.build()
}

pub const VGG11: &[usize] = &[64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0];
pub const VGG13: &[usize] = &[64, 64, 0, 128, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0];
pub const VGG16: &[usize] = &[64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
pub const VGG19: &[usize] =
    &[64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0];
