//! Receptive fields as unions of axis-aligned integer boxes.
//!
//! Intervals are closed (`[lo, hi]`, both inclusive) and 0-indexed.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SliceError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("window lies entirely outside the clamp bounds")]
    EmptyAfterClip,
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: usize, hi: usize },
}

/// Closed integer interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntervalSlice {
    pub lo: usize,
    pub hi: usize,
}

impl IntervalSlice {
    pub fn new(lo: usize, hi: usize) -> Result<Self, SliceError> {
        if lo > hi {
            return Err(SliceError::InvalidInterval { lo, hi });
        }
        Ok(IntervalSlice { lo, hi })
    }

    pub const fn point(i: usize) -> Self {
        IntervalSlice { lo: i, hi: i }
    }

    /// At least 1: an interval always holds `lo`.
    #[allow(clippy::len_without_is_empty)]
    pub const fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn contains(&self, i: usize) -> bool {
        self.lo <= i && i <= self.hi
    }

    fn covers(&self, other: &IntervalSlice) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Overlapping or directly adjacent.
    fn touches(&self, other: &IntervalSlice) -> bool {
        self.lo <= other.hi.saturating_add(1) && other.lo <= self.hi.saturating_add(1)
    }
}

/// Box with one interval per tensor dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HyperRect {
    pub slices: Vec<IntervalSlice>,
}

impl HyperRect {
    pub fn new(slices: Vec<IntervalSlice>) -> Self {
        HyperRect { slices }
    }

    /// Builds a box from `(lo, hi)` pairs. Panics on `lo > hi`.
    pub fn from_bounds(bounds: &[(usize, usize)]) -> Self {
        HyperRect {
            slices: bounds
                .iter()
                .map(|&(lo, hi)| IntervalSlice::new(lo, hi).expect("lo <= hi"))
                .collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.slices.len()
    }

    /// Number of lattice points covered.
    pub fn volume(&self) -> u64 {
        self.slices.iter().map(|s| s.len() as u64).product()
    }

    pub fn contains_rect(&self, other: &HyperRect) -> bool {
        self.slices.iter().zip(&other.slices).all(|(a, b)| a.covers(b))
    }

    pub fn contains_point(&self, p: &[usize]) -> bool {
        self.slices.iter().zip(p).all(|(s, &x)| s.contains(x))
    }

    /// If the two boxes agree on every axis but one, and touch along that axis,
    /// returns their fusion.
    fn fuse(&self, other: &HyperRect) -> Option<HyperRect> {
        let mut differing = None;
        for (d, (a, b)) in self.slices.iter().zip(&other.slices).enumerate() {
            if a != b {
                if differing.is_some() {
                    return None;
                }
                differing = Some(d);
            }
        }
        let d = differing?;
        let (a, b) = (self.slices[d], other.slices[d]);
        if !a.touches(&b) {
            return None;
        }
        let mut slices = self.slices.clone();
        slices[d] = IntervalSlice { lo: a.lo.min(b.lo), hi: a.hi.max(b.hi) };
        Some(HyperRect { slices })
    }
}

/// Union of boxes sharing one dimensionality.
///
/// Sets produced by [`SliceSet::merge`] hold no box contained in another and no pair of
/// boxes that could be fused along a single axis; boxes are kept in sorted order so that
/// equal coverage built the same way compares equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SliceSet {
    rects: Vec<HyperRect>,
}

impl SliceSet {
    pub fn empty() -> Self {
        SliceSet { rects: Vec::new() }
    }

    pub fn from_rect(rect: HyperRect) -> Self {
        SliceSet { rects: vec![rect] }
    }

    /// Unmerged set; fails if the boxes disagree on dimensionality.
    pub fn from_rects(rects: Vec<HyperRect>) -> Result<Self, SliceError> {
        if let Some(first) = rects.first() {
            let dims = first.dims();
            if let Some(bad) = rects.iter().find(|r| r.dims() != dims) {
                return Err(SliceError::DimMismatch { expected: dims, got: bad.dims() });
            }
        }
        Ok(SliceSet { rects })
    }

    pub fn rects(&self) -> &[HyperRect] {
        &self.rects
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    pub fn dims(&self) -> Option<usize> {
        self.rects.first().map(HyperRect::dims)
    }

    pub fn contains_point(&self, p: &[usize]) -> bool {
        self.rects.iter().any(|r| r.contains_point(p))
    }

    /// Smallest single box covering the whole set.
    pub fn bounding_box(&self) -> Option<HyperRect> {
        let first = self.rects.first()?;
        let mut bb = first.clone();
        for r in &self.rects[1..] {
            for (b, s) in bb.slices.iter_mut().zip(&r.slices) {
                b.lo = b.lo.min(s.lo);
                b.hi = b.hi.max(s.hi);
            }
        }
        Some(bb)
    }

    /// Set of the same boxes restricted to the given axes (in that order), merged.
    pub fn project(&self, axes: &[usize]) -> SliceSet {
        let rects = self
            .rects
            .iter()
            .map(|r| HyperRect { slices: axes.iter().map(|&a| r.slices[a]).collect() })
            .collect();
        SliceSet { rects }.merge_unchecked()
    }

    /// Exact number of distinct lattice points covered.
    pub fn union_area(&self) -> u64 {
        match self.rects.len() {
            0 => 0,
            1 => self.rects[0].volume(),
            _ => {
                let refs: Vec<&HyperRect> = self.rects.iter().collect();
                sweep_volume(&refs, 0)
            }
        }
    }

    /// Union of two sets, merged.
    pub fn union(&self, other: &SliceSet) -> Result<SliceSet, SliceError> {
        let mut rects = self.rects.clone();
        rects.extend(other.rects.iter().cloned());
        SliceSet::from_rects(rects)?.merge()
    }

    /// Union of many sets, reduced pairwise so intermediate sets stay small.
    pub fn union_all<'a, I>(sets: I) -> Result<SliceSet, SliceError>
    where
        I: IntoIterator<Item = &'a SliceSet>,
    {
        let mut level: Vec<SliceSet> = sets.into_iter().cloned().collect();
        if level.is_empty() {
            return Ok(SliceSet::empty());
        }
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            let mut it = level.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(a.union(&b)?),
                    None => next.push(a),
                }
            }
            level = next;
        }
        Ok(level.pop().unwrap())
    }

    /// Fuses boxes to a fixed point without changing coverage.
    ///
    /// Contained boxes are dropped first; then any two boxes that coincide on all axes
    /// but one and overlap or abut on that axis are replaced by their fusion, repeated
    /// until nothing applies. The result is not guaranteed to be a minimum box cover.
    pub fn merge(&self) -> Result<SliceSet, SliceError> {
        SliceSet::from_rects(self.rects.clone())?;
        Ok(self.clone().merge_unchecked())
    }

    fn merge_unchecked(mut self) -> SliceSet {
        if self.rects.len() <= 1 {
            return self;
        }
        let bb = self.bounding_box().unwrap();
        if bb.volume() == self.union_area() {
            return SliceSet { rects: vec![bb] };
        }
        let mut rects = std::mem::take(&mut self.rects);
        drop_contained(&mut rects);
        'outer: loop {
            for i in 0..rects.len() {
                for j in i + 1..rects.len() {
                    if let Some(f) = rects[i].fuse(&rects[j]) {
                        rects.swap_remove(j);
                        rects[i] = f;
                        drop_contained(&mut rects);
                        continue 'outer;
                    }
                }
            }
            break;
        }
        rects.sort();
        SliceSet { rects }
    }

    /// Maps every box through a per-axis sliding window and clips to `bounds`.
    ///
    /// Along each axis index `x` reads `[x*stride + offset, x*stride + offset + extent - 1]`
    /// intersected with the axis bound, and an interval of indices reads the union of
    /// those windows (one interval when consecutive windows touch, separate ones when
    /// `stride > extent`). This is how a convolution or pooling window reads its input:
    /// `offset = -padding`, `extent = dilation*(kernel-1) + 1`. Boxes clipped away
    /// entirely are dropped; if nothing survives, `EmptyAfterClip` is returned.
    pub fn take_window(&self, windows: &[AxisWindow], bounds: &[IntervalSlice]) -> Result<SliceSet, SliceError> {
        let mut out = Vec::with_capacity(self.rects.len());
        for r in &self.rects {
            for len in [windows.len(), bounds.len()] {
                if len != r.dims() {
                    return Err(SliceError::DimMismatch { expected: r.dims(), got: len });
                }
            }
            let axes: Vec<Vec<IntervalSlice>> =
                r.slices.iter().zip(windows).zip(bounds).map(|((s, w), b)| w.read(*s, *b)).collect();
            if axes.iter().any(Vec::is_empty) {
                continue;
            }
            // Cartesian product of the per-axis intervals.
            let mut boxes: Vec<Vec<IntervalSlice>> = vec![Vec::with_capacity(r.dims())];
            for ivs in &axes {
                boxes = boxes
                    .into_iter()
                    .flat_map(|prefix| {
                        ivs.iter().map(move |iv| {
                            let mut b = prefix.clone();
                            b.push(*iv);
                            b
                        })
                    })
                    .collect();
            }
            out.extend(boxes.into_iter().map(|slices| HyperRect { slices }));
        }
        if out.is_empty() {
            return Err(SliceError::EmptyAfterClip);
        }
        Ok(SliceSet { rects: out }.merge_unchecked())
    }

    /// Every covered lattice point, deduplicated and sorted.
    pub fn points(&self) -> Vec<Vec<usize>> {
        let mut pts = Vec::new();
        for r in &self.rects {
            let mut cur: Vec<usize> = r.slices.iter().map(|s| s.lo).collect();
            'walk: loop {
                pts.push(cur.clone());
                for d in (0..cur.len()).rev() {
                    if cur[d] < r.slices[d].hi {
                        cur[d] += 1;
                        continue 'walk;
                    }
                    cur[d] = r.slices[d].lo;
                }
                break;
            }
        }
        pts.sort();
        pts.dedup();
        pts
    }
}

/// Per-axis window used by [`SliceSet::take_window`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisWindow {
    pub stride: usize,
    pub offset: i64,
    pub extent: usize,
}

impl AxisWindow {
    pub const IDENTITY: AxisWindow = AxisWindow { stride: 1, offset: 0, extent: 1 };

    pub fn conv(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        AxisWindow { stride, offset: -(padding as i64), extent: dilation * (kernel - 1) + 1 }
    }

    /// Clipped input intervals read by the index interval `s`.
    fn read(&self, s: IntervalSlice, bound: IntervalSlice) -> Vec<IntervalSlice> {
        let span = |lo: usize, hi: usize| {
            let a = (lo as i64 * self.stride as i64 + self.offset).max(bound.lo as i64);
            let b = (hi as i64 * self.stride as i64 + self.offset + self.extent as i64 - 1).min(bound.hi as i64);
            (a <= b).then_some(IntervalSlice { lo: a as usize, hi: b as usize })
        };
        if self.extent >= self.stride {
            span(s.lo, s.hi).into_iter().collect()
        } else {
            (s.lo..=s.hi).filter_map(|x| span(x, x)).collect()
        }
    }
}

fn drop_contained(rects: &mut Vec<HyperRect>) {
    rects.sort();
    rects.dedup();
    let mut i = 0;
    while i < rects.len() {
        let contained = (0..rects.len()).any(|j| j != i && rects[j].contains_rect(&rects[i]));
        if contained {
            rects.remove(i);
        } else {
            i += 1;
        }
    }
}

/// Volume of a union by sweeping axis `axis` over elementary slabs and recursing.
fn sweep_volume(rects: &[&HyperRect], axis: usize) -> u64 {
    if rects.is_empty() {
        return 0;
    }
    if axis + 1 == rects[0].dims() {
        let mut iv: Vec<IntervalSlice> = rects.iter().map(|r| r.slices[axis]).collect();
        iv.sort();
        let mut total = 0u64;
        let mut cur = iv[0];
        for s in &iv[1..] {
            if s.lo <= cur.hi + 1 {
                cur.hi = cur.hi.max(s.hi);
            } else {
                total += cur.len() as u64;
                cur = *s;
            }
        }
        return total + cur.len() as u64;
    }
    // Half-open boundaries along this axis.
    let mut cuts: Vec<usize> = rects
        .iter()
        .flat_map(|r| [r.slices[axis].lo, r.slices[axis].hi + 1])
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut total = 0u64;
    let mut active: Vec<&HyperRect> = Vec::with_capacity(rects.len());
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        active.clear();
        active.extend(rects.iter().filter(|r| r.slices[axis].lo <= a && b - 1 <= r.slices[axis].hi));
        if !active.is_empty() {
            total += (b - a) as u64 * sweep_volume(&active, axis + 1);
        }
    }
    total
}

impl fmt::Display for SliceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, r) in self.rects.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            for (d, s) in r.slices.iter().enumerate() {
                if d > 0 {
                    write!(f, "x")?;
                }
                write!(f, "[{},{}]", s.lo, s.hi)?;
            }
        }
        write!(f, "}}")
    }
}

impl PartialOrd for SliceSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SliceSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rects.cmp(&other.rects)
    }
}

impl Serialize for SliceSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<Vec<[usize; 2]>> =
            self.rects.iter().map(|r| r.slices.iter().map(|s| [s.lo, s.hi]).collect()).collect();
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SliceSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: Vec<Vec<[usize; 2]>> = Vec::deserialize(deserializer)?;
        let rects = raw
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|[lo, hi]| IntervalSlice::new(lo, hi))
                    .collect::<Result<Vec<_>, _>>()
                    .map(HyperRect::new)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        SliceSet::from_rects(rects).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(boxes: &[&[(usize, usize)]]) -> SliceSet {
        SliceSet::from_rects(boxes.iter().map(|b| HyperRect::from_bounds(b)).collect()).unwrap()
    }

    #[test]
    fn adjacency_fuses_along_one_axis() {
        let s = set(&[&[(1, 3), (1, 5)], &[(4, 6), (1, 5)]]).merge().unwrap();
        assert_eq!(s, set(&[&[(1, 6), (1, 5)]]));
    }

    #[test]
    fn containment_is_dropped() {
        let s = set(&[&[(1, 5), (1, 5)], &[(2, 3), (2, 3)]]).merge().unwrap();
        assert_eq!(s, set(&[&[(1, 5), (1, 5)]]));
    }

    #[test]
    fn unmergeable_boxes_are_kept() {
        // L-shape: cannot become a single box and neither contains the other.
        let s = set(&[&[(0, 3), (0, 0)], &[(0, 0), (0, 3)]]).merge().unwrap();
        assert_eq!(s.rects().len(), 2);
        assert_eq!(s.union_area(), 7);
    }

    #[test]
    fn union_area_cases() {
        assert_eq!(set(&[&[(0, 3), (0, 3)]]).union_area(), 16);
        assert_eq!(set(&[&[(1, 4), (1, 4)], &[(3, 6), (3, 6)]]).union_area(), 28);
        assert_eq!(SliceSet::empty().union_area(), 0);
    }

    #[test]
    fn dim_mismatch() {
        let e = SliceSet::from_rects(vec![
            HyperRect::from_bounds(&[(0, 1)]),
            HyperRect::from_bounds(&[(0, 1), (0, 1)]),
        ])
        .unwrap_err();
        assert_eq!(e, SliceError::DimMismatch { expected: 1, got: 2 });
    }

    #[test]
    fn conv_window_at_interior_position() {
        // 1-indexed output (3,3) of a 5x5/stride-1 conv with padding 2 reads rows/cols [1,5];
        // 0-indexed that is output (2,2) reading [0,4].
        let out = set(&[&[(2, 2), (2, 2)]]);
        let w = AxisWindow::conv(5, 1, 2, 1);
        let bounds = [IntervalSlice { lo: 0, hi: 31 }; 2];
        let got = out.take_window(&[w, w], &bounds).unwrap();
        assert_eq!(got, set(&[&[(0, 4), (0, 4)]]));
    }

    #[test]
    fn window_clips_at_corner() {
        let out = set(&[&[(0, 0), (0, 0)]]);
        let w = AxisWindow::conv(5, 1, 2, 1);
        let bounds = [IntervalSlice { lo: 0, hi: 9 }; 2];
        let got = out.take_window(&[w, w], &bounds).unwrap();
        assert_eq!(got, set(&[&[(0, 2), (0, 2)]]));
        assert_eq!(got.union_area(), 9);
    }

    #[test]
    fn window_fully_outside_is_an_error() {
        let out = set(&[&[(20, 20)]]);
        let w = AxisWindow { stride: 1, offset: 0, extent: 1 };
        let err = out.take_window(&[w], &[IntervalSlice { lo: 0, hi: 9 }]).unwrap_err();
        assert_eq!(err, SliceError::EmptyAfterClip);
    }

    #[test]
    fn json_shape() {
        let s = set(&[&[(0, 2), (1, 5), (1, 5)]]);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[[[0,2],[1,5],[1,5]]]");
        let back: SliceSet = serde_json::from_str("[[[0,2],[1,5],[1,5]]]").unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SliceSet>("[[[3,2]]]").is_err());
    }

    #[test]
    fn points_enumerates_lattice() {
        let s = set(&[&[(0, 1), (0, 1)], &[(1, 2), (1, 1)]]);
        assert_eq!(s.points(), vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1], vec![2, 1]]);
    }
}
