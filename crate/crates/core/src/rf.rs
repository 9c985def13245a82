//! Exact receptive fields of every neuron in a computation graph.
//!
//! Fields are propagated node by node in topological order. The input node's element
//! `(d, i, j)` starts as the box `[0, C-1] x [i, i] x [j, j]` (every field carries the
//! full input-channel extent), and each op reads the fields of its inputs through its
//! own indexing rule:
//!
//! * conv / pool windows take the union over their (stride, padding, dilation) window,
//!   with padded positions contributing nothing;
//! * element-wise ops pass fields through unchanged;
//! * `add` unions its operands element-wise, `concat` stacks channel fields;
//! * `flatten` re-indexes, `linear` and adaptive pooling union over all contributors;
//! * `permute` moves fields to new positions without changing any field.
//!
//! Storage is shared: each node keeps a few spatial grids of `Arc<SliceSet>` plus a
//! channel-to-grid table, so channels with identical fields (every channel of a conv
//! output) share one grid, and element-wise ops share their input's grids outright.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, GraphIR, Hw, Op, Shape, Window};
use crate::slices::{AxisWindow, HyperRect, IntervalSlice, SliceError, SliceSet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RfError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error("node `{node}` has no element at {position:?}")]
    UnknownPosition { node: String, position: Vec<usize> },
    #[error("node `{node}`: {reason}")]
    Unsupported { node: String, reason: String },
}

/// Spatial grid of fields, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub h: usize,
    pub w: usize,
    fields: Vec<Arc<SliceSet>>,
}

impl FieldGrid {
    pub fn get(&self, i: usize, j: usize) -> &Arc<SliceSet> {
        &self.fields[i * self.w + j]
    }

    pub fn fields(&self) -> &[Arc<SliceSet>] {
        &self.fields
    }
}

/// Fields of every element of one node's output.
#[derive(Debug, Clone)]
pub struct NodeFields {
    shape: Shape,
    groups: Vec<Arc<FieldGrid>>,
    channel_group: Vec<u32>,
}

impl NodeFields {
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn channels(&self) -> usize {
        self.channel_group.len()
    }

    /// Spatial grid holding channel `c`'s fields.
    pub fn grid(&self, c: usize) -> &FieldGrid {
        &self.groups[self.channel_group[c] as usize]
    }

    pub fn spatial(&self) -> (usize, usize) {
        let g = &self.groups[0];
        (g.h, g.w)
    }

    /// Field of element `(c, i, j)`; flat nodes use `i = j = 0`.
    pub fn field(&self, c: usize, i: usize, j: usize) -> Option<&SliceSet> {
        let (h, w) = self.spatial();
        if c >= self.channels() || i >= h || j >= w {
            return None;
        }
        Some(self.grid(c).get(i, j))
    }

    /// Distinct grids and how many channels use each.
    fn group_weights(&self) -> Vec<(usize, &FieldGrid)> {
        let mut counts = vec![0usize; self.groups.len()];
        for &g in &self.channel_group {
            counts[g as usize] += 1;
        }
        counts.into_iter().zip(self.groups.iter().map(|g| g.as_ref())).filter(|(n, _)| *n > 0).collect()
    }

    /// Union of fields over all channels at the given spatial positions.
    fn union_at(&self, positions: impl IntoIterator<Item = (usize, usize)>) -> Result<SliceSet, SliceError> {
        let positions: Vec<(usize, usize)> = positions.into_iter().collect();
        let mut uniq = Distinct::default();
        for g in self.distinct_groups() {
            for &(i, j) in &positions {
                uniq.push(g.get(i, j));
            }
        }
        union_fields(&uniq.items)
    }

    fn distinct_groups(&self) -> impl Iterator<Item = &FieldGrid> {
        self.group_weights().into_iter().map(|(_, g)| g)
    }
}

/// Fields deduplicated by identity, in first-seen order.
#[derive(Default)]
struct Distinct<'a> {
    items: Vec<&'a Arc<SliceSet>>,
    seen: std::collections::HashSet<*const SliceSet>,
}

impl<'a> Distinct<'a> {
    fn push(&mut self, f: &'a Arc<SliceSet>) {
        if self.seen.insert(Arc::as_ptr(f)) {
            self.items.push(f);
        }
    }
}

fn union_fields(fields: &[&Arc<SliceSet>]) -> Result<SliceSet, SliceError> {
    match fields.len() {
        0 => Ok(SliceSet::empty()),
        1 => Ok(fields[0].as_ref().clone()),
        n if n <= 64 => {
            let rects: Vec<HyperRect> = fields.iter().flat_map(|f| f.rects().iter().cloned()).collect();
            SliceSet::from_rects(rects)?.merge()
        }
        _ => SliceSet::union_all(fields.iter().map(|f| f.as_ref())),
    }
}

/// Receptive fields for every node of a graph.
#[derive(Debug, Clone)]
pub struct RFMap {
    pub input_shape: [usize; 3],
    nodes: HashMap<String, NodeFields>,
}

impl RFMap {
    pub fn node(&self, id: &str) -> Result<&NodeFields, RfError> {
        self.nodes.get(id).ok_or_else(|| GraphError::UnknownNode(id.to_string()).into())
    }

    /// Field of element `(c, i, j)` of node `id`.
    pub fn field(&self, id: &str, c: usize, i: usize, j: usize) -> Result<&SliceSet, RfError> {
        self.node(id)?.field(c, i, j).ok_or_else(|| RfError::UnknownPosition {
            node: id.to_string(),
            position: vec![c, i, j],
        })
    }

    /// Field of the `hp x wp` embedded patch whose top-left corner is `(row, col)`,
    /// over all channels.
    pub fn patch_field(&self, id: &str, row: usize, col: usize, hp: usize, wp: usize) -> Result<SliceSet, RfError> {
        let nf = self.node(id)?;
        let (h, w) = nf.spatial();
        if hp == 0 || wp == 0 || row + hp > h || col + wp > w {
            return Err(RfError::UnknownPosition { node: id.to_string(), position: vec![row, col] });
        }
        let positions = (row..row + hp).flat_map(|i| (col..col + wp).map(move |j| (i, j)));
        Ok(nf.union_at(positions)?)
    }

    /// Mean receptive field of a node as a percentage of image pixels.
    pub fn mean_receptive_field(&self, id: &str) -> Result<f64, RfError> {
        Ok(self.stats(id)?.mean_rf_pct)
    }

    /// Spatial pixel count of every distinct field, weighted by channel multiplicity.
    pub fn stats(&self, id: &str) -> Result<RfStats, RfError> {
        let nf = self.node(id)?;
        let [_, ih, iw] = self.input_shape;
        let pixels = (ih * iw) as f64;
        let (mut sum, mut count) = (0f64, 0f64);
        let (mut min, mut max) = (u64::MAX, 0u64);
        for (weight, grid) in nf.group_weights() {
            let mut cache: HashMap<*const SliceSet, u64> = HashMap::new();
            for f in grid.fields() {
                let area = *cache.entry(Arc::as_ptr(f)).or_insert_with(|| spatial_area(f));
                sum += weight as f64 * area as f64;
                count += weight as f64;
                min = min.min(area);
                max = max.max(area);
            }
        }
        Ok(RfStats {
            shape: nf.shape.clone(),
            mean_rf_pct: 100.0 * sum / count / pixels,
            min_rf_pct: 100.0 * min as f64 / pixels,
            max_rf_pct: 100.0 * max as f64 / pixels,
        })
    }

    /// Stats for every node, keyed by id.
    pub fn report(&self) -> Result<std::collections::BTreeMap<String, RfStats>, RfError> {
        self.nodes.keys().map(|id| Ok((id.clone(), self.stats(id)?))).collect()
    }
}

/// Number of image pixels (row, col) covered by a field, ignoring channels.
pub fn spatial_area(field: &SliceSet) -> u64 {
    if field.rects().len() == 1 {
        let s = &field.rects()[0].slices;
        return (s[1].len() * s[2].len()) as u64;
    }
    field.project(&[1, 2]).union_area()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfStats {
    pub shape: Shape,
    pub mean_rf_pct: f64,
    pub min_rf_pct: f64,
    pub max_rf_pct: f64,
}

fn as_chw(shape: &Shape) -> (usize, usize, usize) {
    match shape.as_slice() {
        [c, h, w] => (*c, *h, *w),
        [n] => (*n, 1, 1),
        [a, b] => (*a, *b, 1),
        _ => (shape.iter().product(), 1, 1),
    }
}

/// Input positions read by output `(oi, oj)` of a sliding window, padding excluded.
fn window_positions(win: &Window, oi: usize, oj: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    let rows = axis_taps(win.kernel.h, win.stride.h, win.padding.h, win.dilation.h, oi, h);
    let cols = axis_taps(win.kernel.w, win.stride.w, win.padding.w, win.dilation.w, oj, w);
    rows.iter().flat_map(|&i| cols.iter().map(move |&j| (i, j))).collect()
}

fn axis_taps(k: usize, s: usize, p: usize, d: usize, o: usize, n: usize) -> Vec<usize> {
    let bounds = [IntervalSlice { lo: 0, hi: n - 1 }];
    if d == 1 {
        // Contiguous window: read it straight off the slice algebra.
        let out = SliceSet::from_rect(HyperRect::new(vec![IntervalSlice::point(o)]));
        return match out.take_window(&[AxisWindow::conv(k, s, p, d)], &bounds) {
            Ok(set) => {
                let iv = set.rects()[0].slices[0];
                (iv.lo..=iv.hi).collect()
            }
            Err(_) => Vec::new(),
        };
    }
    (0..k)
        .filter_map(|t| {
            let x = (o * s + t * d) as i64 - p as i64;
            (x >= 0 && (x as usize) < n).then_some(x as usize)
        })
        .collect()
}

fn windowed_grid(
    node: &str,
    src: &NodeFields,
    groups: &[&FieldGrid],
    win: &Window,
    out_h: usize,
    out_w: usize,
) -> Result<FieldGrid, RfError> {
    let (h, w) = src.spatial();
    let mut fields = Vec::with_capacity(out_h * out_w);
    for oi in 0..out_h {
        for oj in 0..out_w {
            let pos = window_positions(win, oi, oj, h, w);
            if pos.is_empty() {
                return Err(RfError::Unsupported {
                    node: node.to_string(),
                    reason: format!("output ({oi},{oj}) reads only padding"),
                });
            }
            let mut uniq = Distinct::default();
            for g in groups {
                for &(i, j) in &pos {
                    uniq.push(g.get(i, j));
                }
            }
            fields.push(Arc::new(union_fields(&uniq.items)?));
        }
    }
    Ok(FieldGrid { h: out_h, w: out_w, fields })
}

fn single_group(shape: Shape, grid: FieldGrid, channels: usize) -> NodeFields {
    NodeFields { shape, groups: vec![Arc::new(grid)], channel_group: vec![0; channels] }
}

/// Channel-wise windowed op (pooling): one output grid per input grid.
fn per_group_window(node: &str, src: &NodeFields, win: &Window, shape: &Shape) -> Result<NodeFields, RfError> {
    let (_, oh, ow) = as_chw(shape);
    let groups = src
        .groups
        .iter()
        .map(|g| windowed_grid(node, src, &[g.as_ref()], win, oh, ow).map(Arc::new))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NodeFields { shape: shape.clone(), groups, channel_group: src.channel_group.clone() })
}

fn input_fields(c: usize, h: usize, w: usize) -> NodeFields {
    let mut fields = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            fields.push(Arc::new(SliceSet::from_rect(HyperRect::new(vec![
                IntervalSlice { lo: 0, hi: c - 1 },
                IntervalSlice::point(i),
                IntervalSlice::point(j),
            ]))));
        }
    }
    single_group(vec![c, h, w], FieldGrid { h, w, fields }, c)
}

fn add_fields(inputs: &[&NodeFields], shape: &Shape) -> Result<NodeFields, RfError> {
    let first = inputs[0];
    let channels = first.channels();
    let mut keys: HashMap<Vec<u32>, u32> = HashMap::new();
    let mut channel_group = Vec::with_capacity(channels);
    let mut groups = Vec::new();
    for c in 0..channels {
        let key: Vec<u32> = inputs.iter().map(|n| n.channel_group[c]).collect();
        let next = keys.len() as u32;
        let gid = *keys.entry(key.clone()).or_insert_with(|| {
            groups.push(key);
            next
        });
        channel_group.push(gid);
    }
    let grids = groups
        .iter()
        .map(|key| {
            let parts: Vec<&Arc<FieldGrid>> = inputs.iter().zip(key).map(|(n, &g)| &n.groups[g as usize]).collect();
            if parts.iter().all(|p| Arc::ptr_eq(p, parts[0])) {
                return Ok(parts[0].clone());
            }
            let (h, w) = (parts[0].h, parts[0].w);
            let mut fields = Vec::with_capacity(h * w);
            for k in 0..h * w {
                let mut uniq = Distinct::default();
                for p in &parts {
                    uniq.push(&p.fields[k]);
                }
                let items = uniq.items;
                fields.push(if items.len() == 1 { items[0].clone() } else { Arc::new(union_fields(&items)?) });
            }
            Ok(Arc::new(FieldGrid { h, w, fields }))
        })
        .collect::<Result<Vec<_>, SliceError>>()?;
    Ok(NodeFields { shape: shape.clone(), groups: grids, channel_group })
}

fn concat_fields(inputs: &[&NodeFields], shape: &Shape) -> NodeFields {
    let mut groups = Vec::new();
    let mut channel_group = Vec::new();
    for n in inputs {
        let base = groups.len() as u32;
        groups.extend(n.groups.iter().cloned());
        channel_group.extend(n.channel_group.iter().map(|g| g + base));
    }
    NodeFields { shape: shape.clone(), groups, channel_group }
}

fn flatten_fields(src: &NodeFields, shape: &Shape) -> NodeFields {
    let (c, h, w) = as_chw(&src.shape);
    let mut groups = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let g = src.grid(ch);
        for i in 0..h {
            for j in 0..w {
                groups.push(Arc::new(FieldGrid { h: 1, w: 1, fields: vec![g.get(i, j).clone()] }));
            }
        }
    }
    let channel_group = (0..groups.len() as u32).collect();
    NodeFields { shape: shape.clone(), groups, channel_group }
}

fn permute_fields(node: &str, src: &NodeFields, order: &[usize], shape: &Shape) -> Result<NodeFields, RfError> {
    let in_shape = &src.shape;
    if in_shape.len() != 3 {
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return Ok(NodeFields { shape: shape.clone(), ..src.clone() });
        }
        return Err(RfError::Unsupported {
            node: node.to_string(),
            reason: format!("permute of rank-{} tensors", in_shape.len()),
        });
    }
    let (oc, oh, ow) = (shape[0], shape[1], shape[2]);
    let lookup = |a: [usize; 3]| -> &Arc<SliceSet> {
        let mut idx = [0usize; 3];
        for (k, &axis) in order.iter().enumerate() {
            idx[axis] = a[k];
        }
        src.grid(idx[0]).get(idx[1], idx[2])
    };
    if order[0] == 0 {
        // Channel axis stays: permute each distinct grid once.
        let mut cache: HashMap<u32, u32> = HashMap::new();
        let mut groups = Vec::new();
        let mut channel_group = Vec::with_capacity(oc);
        for c in 0..oc {
            let g = src.channel_group[c];
            let gid = *cache.entry(g).or_insert_with(|| {
                let fields =
                    (0..oh).flat_map(|i| (0..ow).map(move |j| (i, j))).map(|(i, j)| lookup([c, i, j]).clone()).collect();
                groups.push(Arc::new(FieldGrid { h: oh, w: ow, fields }));
                groups.len() as u32 - 1
            });
            channel_group.push(gid);
        }
        return Ok(NodeFields { shape: shape.clone(), groups, channel_group });
    }
    let mut groups = Vec::with_capacity(oc);
    for c in 0..oc {
        let fields =
            (0..oh).flat_map(|i| (0..ow).map(move |j| (i, j))).map(|(i, j)| lookup([c, i, j]).clone()).collect();
        groups.push(Arc::new(FieldGrid { h: oh, w: ow, fields }));
    }
    Ok(NodeFields { shape: shape.clone(), groups, channel_group: (0..oc as u32).collect() })
}

/// Computes the exact receptive field of every element of every node.
pub fn functional_rf(g: &GraphIR) -> Result<RFMap, RfError> {
    let sorted = g.topo_sort()?;
    let [c_in, h_in, w_in] = g.input_shape;
    let mut nodes: HashMap<String, NodeFields> = HashMap::with_capacity(sorted.nodes().len());
    for node in sorted.nodes() {
        let shape = g.output_shape(&node.id)?.clone();
        let ins: Vec<&NodeFields> = node.inputs.iter().map(|i| &nodes[i]).collect();
        let id = node.id.as_str();
        let fields = match &node.op {
            Op::Input => input_fields(c_in, h_in, w_in),
            Op::Conv2d { window, out_channels } => {
                let src = ins[0];
                let groups: Vec<&FieldGrid> = src.distinct_groups().collect();
                let grid = windowed_grid(id, src, &groups, window, shape[1], shape[2])?;
                single_group(shape, grid, *out_channels)
            }
            Op::MaxPool2d(window) | Op::AvgPool2d(window) => per_group_window(id, ins[0], window, &shape)?,
            Op::AdaptiveAvgPool2d { output_size } => {
                let (_, h, w) = as_chw(&ins[0].shape);
                let k = Hw::new(h / output_size.h, w / output_size.w);
                let window = Window { kernel: k, stride: k, padding: Hw::square(0), dilation: Hw::square(1) };
                per_group_window(id, ins[0], &window, &shape)?
            }
            Op::Relu | Op::Sigmoid | Op::BatchNorm2d { .. } | Op::DropoutIdentity => {
                NodeFields { shape, ..ins[0].clone() }
            }
            Op::Add => add_fields(&ins, &shape)?,
            Op::Concat { .. } => concat_fields(&ins, &shape),
            Op::Flatten => flatten_fields(ins[0], &shape),
            Op::Linear { out_features } => {
                let src = ins[0];
                let (_, h, w) = as_chw(&src.shape);
                let all = src.union_at((0..h).flat_map(|i| (0..w).map(move |j| (i, j))))?;
                let grid = FieldGrid { h: 1, w: 1, fields: vec![Arc::new(all)] };
                single_group(shape, grid, *out_features)
            }
            Op::Permute { order } => permute_fields(id, ins[0], order, &shape)?,
        };
        nodes.insert(node.id.clone(), fields);
    }
    Ok(RFMap { input_shape: g.input_shape, nodes })
}

/// Convenience wrapper: mean receptive field (percent of image pixels) of one node.
pub fn mean_receptive_field(rf: &RFMap, node_id: &str) -> Result<f64, RfError> {
    rf.mean_receptive_field(node_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{conv, maxpool, GraphBuilder};

    fn boxed(c: usize, rows: (usize, usize), cols: (usize, usize)) -> SliceSet {
        SliceSet::from_rect(HyperRect::from_bounds(&[(0, c - 1), rows, cols]))
    }

    #[test]
    fn identity_network_is_single_pixel() {
        let g = GraphBuilder::new("id", [3, 8, 8], "x").build().unwrap();
        let rf = functional_rf(&g).unwrap();
        assert_eq!(rf.field("x", 1, 2, 5).unwrap(), &boxed(3, (2, 2), (5, 5)));
        let pct = rf.mean_receptive_field("x").unwrap();
        assert!((pct - 100.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn conv5_same_padding_interior() {
        let mut b = GraphBuilder::new("c", [3, 16, 16], "x");
        b.then("c", conv(5, 1, 2, 4));
        let rf = functional_rf(&b.build().unwrap()).unwrap();
        // 1-indexed position (3,3) -> rows/cols [1,5]; here 0-indexed.
        assert_eq!(rf.field("c", 0, 2, 2).unwrap(), &boxed(3, (0, 4), (0, 4)));
        assert_eq!(rf.field("c", 3, 0, 0).unwrap(), &boxed(3, (0, 2), (0, 2)));
    }

    #[test]
    fn strided_sparse_field_keeps_gaps() {
        // 1x1 kernel with stride 2 followed by a 2x2 conv: the field skips odd pixels.
        let mut b = GraphBuilder::new("s", [1, 8, 8], "x");
        b.then("a", conv(1, 2, 0, 1)).then("b", conv(2, 1, 0, 1));
        let rf = functional_rf(&b.build().unwrap()).unwrap();
        let f = rf.field("b", 0, 0, 0).unwrap();
        assert_eq!(f.union_area(), 4);
        assert_eq!(f.rects().len(), 4);
    }

    #[test]
    fn global_pooling_covers_image() {
        let mut b = GraphBuilder::new("gp", [3, 8, 8], "x");
        b.then("c", conv(3, 1, 1, 4)).then(
            "gap",
            Op::AdaptiveAvgPool2d { output_size: Hw::square(1) },
        );
        b.then("f", Op::Flatten).then("fc", Op::Linear { out_features: 2 });
        let rf = functional_rf(&b.build().unwrap()).unwrap();
        for id in ["gap", "f", "fc"] {
            assert!((rf.mean_receptive_field(id).unwrap() - 100.0).abs() < 1e-12, "{id}");
        }
    }

    #[test]
    fn transpose_moves_fields() {
        let mut b = GraphBuilder::new("t", [2, 6, 6], "x");
        b.then("c", conv(3, 1, 0, 2)).then("t", Op::Permute { order: vec![0, 2, 1] });
        let rf = functional_rf(&b.build().unwrap()).unwrap();
        assert_eq!(rf.field("t", 0, 0, 3).unwrap(), rf.field("c", 0, 3, 0).unwrap());
        assert_eq!(rf.field("t", 1, 0, 3).unwrap(), &boxed(2, (3, 5), (0, 2)));
    }

    #[test]
    fn channel_spatial_permute_reindexes() {
        let mut b = GraphBuilder::new("t", [1, 3, 4], "x");
        b.then("p", Op::Permute { order: vec![2, 0, 1] });
        let g = b.build().unwrap();
        assert_eq!(g.output_shape("p").unwrap(), &vec![4, 1, 3]);
        let rf = functional_rf(&g).unwrap();
        // p[c=j, 0, i] = x[0, i, j]
        assert_eq!(rf.field("p", 3, 0, 2).unwrap(), &boxed(1, (2, 2), (3, 3)));
    }

    #[test]
    fn concat_keeps_per_channel_fields() {
        let mut b = GraphBuilder::new("d", [1, 8, 8], "x");
        b.then("c", conv(3, 1, 1, 2));
        b.push("cat", Op::Concat { axis: 0 }, &["x", "c"]);
        let rf = functional_rf(&b.build().unwrap()).unwrap();
        assert_eq!(rf.field("cat", 0, 4, 4).unwrap().union_area(), 1);
        assert_eq!(rf.field("cat", 2, 4, 4).unwrap().union_area(), 9);
        // 1 channel with 1-pixel fields and 2 with 3x3 (clipped at the border).
        let s = rf.stats("cat").unwrap();
        assert_eq!(s.min_rf_pct, 100.0 / 64.0);
        assert_eq!(s.max_rf_pct, 900.0 / 64.0);
    }

    #[test]
    fn patch_field_unions_window() {
        let mut b = GraphBuilder::new("p", [1, 8, 8], "x");
        b.then("c", conv(3, 1, 1, 2)).then("m", maxpool(2, 2));
        let rf = functional_rf(&b.build().unwrap()).unwrap();
        let f = rf.patch_field("m", 1, 1, 2, 2).unwrap();
        assert_eq!(f, boxed(1, (1, 6), (1, 6)));
        assert!(matches!(rf.patch_field("m", 3, 3, 2, 2), Err(RfError::UnknownPosition { .. })));
        assert!(matches!(rf.stats("nope"), Err(RfError::Graph(GraphError::UnknownNode(_)))));
    }
}
