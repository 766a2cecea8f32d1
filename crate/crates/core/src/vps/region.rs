//! Region algebra over the parameter space: half-open spans, normalized
//! interval sets over the flat offset space, axis-aligned tensor boxes, and
//! [`RegionSet`]s combining both.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::{Error, Result};

/// Half-open interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub lo: u64,
    pub hi: u64,
}

impl Span {
    pub const fn new(lo: u64, hi: u64) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> u64 {
        self.hi.saturating_sub(self.lo)
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, x: u64) -> bool {
        self.lo <= x && x < self.hi
    }

    pub fn intersect(&self, other: &Span) -> Option<Span> {
        let s = Span::new(self.lo.max(other.lo), self.hi.min(other.hi));
        (!s.is_empty()).then_some(s)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.lo, self.hi)
    }
}

/// Sorted, disjoint, non-adjacent set of spans.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct IntervalSet {
    spans: Vec<Span>,
}

impl IntervalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_spans(spans: impl IntoIterator<Item = Span>) -> Self {
        let mut v: Vec<Span> = spans.into_iter().filter(|s| !s.is_empty()).collect();
        v.sort_unstable();
        let mut out: Vec<Span> = Vec::with_capacity(v.len());
        for s in v {
            match out.last_mut() {
                Some(last) if s.lo <= last.hi => last.hi = last.hi.max(s.hi),
                _ => out.push(s),
            }
        }
        Self { spans: out }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn numel(&self) -> u64 {
        self.spans.iter().map(Span::len).sum()
    }

    pub fn contains(&self, x: u64) -> bool {
        let i = self.spans.partition_point(|s| s.hi <= x);
        self.spans.get(i).is_some_and(|s| s.contains(x))
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        IntervalSet::from_spans(self.spans.iter().chain(other.spans.iter()).copied())
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let (a, b) = (&self.spans, &other.spans);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            if let Some(s) = a[i].intersect(&b[j]) {
                out.push(s);
            }
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet { spans: out }
    }

    pub fn difference(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        let b = &other.spans;
        let mut j = 0;
        for s in &self.spans {
            let mut lo = s.lo;
            while j < b.len() && b[j].hi <= lo {
                j += 1;
            }
            let mut k = j;
            while k < b.len() && b[k].lo < s.hi {
                if b[k].lo > lo {
                    out.push(Span::new(lo, b[k].lo));
                }
                lo = lo.max(b[k].hi);
                k += 1;
            }
            if lo < s.hi {
                out.push(Span::new(lo, s.hi));
            }
        }
        IntervalSet { spans: out }
    }
}

/// Axis-aligned sub-box of one tensor, by declaration index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TensorBox {
    pub tensor: usize,
    pub dims: Vec<Span>,
}

impl TensorBox {
    pub fn new(tensor: usize, dims: Vec<Span>) -> Self {
        Self { tensor, dims }
    }

    pub fn full(tensor: usize, shape: &[u64]) -> Self {
        Self { tensor, dims: shape.iter().map(|&e| Span::new(0, e)).collect() }
    }

    pub fn numel(&self) -> u64 {
        self.dims.iter().map(Span::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.iter().any(Span::is_empty)
    }

    pub fn contains_index(&self, idx: &[u64]) -> bool {
        self.dims.len() == idx.len() && self.dims.iter().zip(idx).all(|(s, &i)| s.contains(i))
    }

    pub fn intersect(&self, other: &TensorBox) -> Option<TensorBox> {
        if self.tensor != other.tensor || self.dims.len() != other.dims.len() {
            return None;
        }
        let dims = self
            .dims
            .iter()
            .zip(&other.dims)
            .map(|(a, b)| a.intersect(b))
            .collect::<Option<Vec<_>>>()?;
        Some(TensorBox { tensor: self.tensor, dims })
    }

    /// `self \ other` as at most `2 * rank` disjoint boxes, split axis by axis.
    pub fn subtract(&self, other: &TensorBox) -> Vec<TensorBox> {
        if self.intersect(other).is_none() {
            return vec![self.clone()];
        }
        let mut out = Vec::new();
        let mut core = self.clone();
        for axis in 0..self.dims.len() {
            let (a, b) = (core.dims[axis], other.dims[axis]);
            if a.lo < b.lo {
                let mut piece = core.clone();
                piece.dims[axis] = Span::new(a.lo, b.lo);
                out.push(piece);
            }
            if b.hi < a.hi {
                let mut piece = core.clone();
                piece.dims[axis] = Span::new(b.hi, a.hi);
                out.push(piece);
            }
            core.dims[axis] = Span::new(a.lo.max(b.lo), a.hi.min(b.hi));
        }
        out
    }

    /// Flat-offset runs covered by this box, in row-major element order.
    /// `base` is the tensor's global offset.
    pub fn flat_runs(&self, shape: &[u64], base: u64) -> Vec<Span> {
        debug_assert_eq!(shape.len(), self.dims.len());
        if self.is_empty() {
            return Vec::new();
        }
        let d = self.dims.len();
        if d == 0 {
            return vec![Span::new(base, base + 1)];
        }
        let mut strides = vec![1u64; d];
        for a in (0..d - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        // Innermost axis k such that every axis after it is full.
        let mut k = d - 1;
        while k > 0 && self.dims[k] == Span::new(0, shape[k]) {
            k -= 1;
        }
        let run_len = self.dims[k].len() * strides[k];
        let mut runs = Vec::new();
        let mut idx: Vec<u64> = self.dims[..k].iter().map(|s| s.lo).collect();
        loop {
            let start = base
                + idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<u64>()
                + self.dims[k].lo * strides[k];
            match runs.last_mut() {
                Some(Span { hi, .. }) if *hi == start => *hi += run_len,
                _ => runs.push(Span::new(start, start + run_len)),
            }
            // odometer over the outer axes
            let mut a = k;
            loop {
                if a == 0 {
                    return runs;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < self.dims[a].hi {
                    break;
                }
                idx[a] = self.dims[a].lo;
            }
        }
    }
}

/// Flat-offset spans of the local row-major positions `[lo, hi)` of a box.
pub fn box_local_range_to_flat(b: &TensorBox, shape: &[u64], base: u64, lo: u64, hi: u64) -> Vec<Span> {
    let mut out = Vec::new();
    let mut pos = 0u64;
    for run in b.flat_runs(shape, base) {
        let local = Span::new(pos, pos + run.len());
        if let Some(cut) = local.intersect(&Span::new(lo, hi)) {
            out.push(Span::new(run.lo + (cut.lo - pos), run.lo + (cut.hi - pos)));
        }
        pos += run.len();
        if pos >= hi {
            break;
        }
    }
    out
}

impl fmt::Display for TensorBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str("x")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Fingerprint of the parameter space a region set is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VpsId(pub u64);

/// Per-tensor boxes plus flat intervals, both normalized: boxes pairwise
/// disjoint and sorted, intervals disjoint and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegionSet {
    binding: VpsId,
    boxes: Vec<TensorBox>,
    flat: IntervalSet,
}

impl RegionSet {
    pub fn empty(binding: VpsId) -> Self {
        Self { binding, boxes: Vec::new(), flat: IntervalSet::new() }
    }

    /// Builds a normalized set from boxes that may overlap.
    pub fn from_boxes(binding: VpsId, boxes: impl IntoIterator<Item = TensorBox>) -> Self {
        let mut acc: Vec<TensorBox> = Vec::new();
        for b in boxes {
            if b.is_empty() {
                continue;
            }
            let tensor = b.tensor;
            let mut pieces = vec![b];
            for existing in acc.iter().filter(|e| e.tensor == tensor) {
                pieces = pieces.iter().flat_map(|p| p.subtract(existing)).collect();
                if pieces.is_empty() {
                    break;
                }
            }
            acc.extend(pieces);
        }
        Self { binding, boxes: coalesce(acc), flat: IntervalSet::new() }
    }

    pub fn from_flat(binding: VpsId, flat: IntervalSet) -> Self {
        Self { binding, boxes: Vec::new(), flat }
    }

    pub fn binding(&self) -> VpsId {
        self.binding
    }

    pub fn boxes(&self) -> &[TensorBox] {
        &self.boxes
    }

    pub fn flat(&self) -> &IntervalSet {
        &self.flat
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty() && self.flat.is_empty()
    }

    pub fn numel(&self) -> u64 {
        self.boxes.iter().map(TensorBox::numel).sum::<u64>() + self.flat.numel()
    }

    fn check(&self, other: &RegionSet) -> Result<()> {
        if self.binding != other.binding {
            return Err(Error::VpsMismatch);
        }
        Ok(())
    }

    pub fn intersect(&self, other: &RegionSet) -> Result<RegionSet> {
        self.check(other)?;
        let mut boxes = Vec::new();
        for a in &self.boxes {
            for b in tensor_slice(&other.boxes, a.tensor) {
                if let Some(c) = a.intersect(b) {
                    boxes.push(c);
                }
            }
        }
        Ok(RegionSet {
            binding: self.binding,
            boxes: coalesce(boxes),
            flat: self.flat.intersect(&other.flat),
        })
    }

    pub fn difference(&self, other: &RegionSet) -> Result<RegionSet> {
        self.check(other)?;
        let mut boxes = Vec::new();
        for a in &self.boxes {
            let mut pieces = vec![a.clone()];
            for b in tensor_slice(&other.boxes, a.tensor) {
                pieces = pieces.iter().flat_map(|p| p.subtract(b)).collect();
                if pieces.is_empty() {
                    break;
                }
            }
            boxes.extend(pieces);
        }
        Ok(RegionSet {
            binding: self.binding,
            boxes: coalesce(boxes),
            flat: self.flat.difference(&other.flat),
        })
    }

    pub fn union(&self, other: &RegionSet) -> Result<RegionSet> {
        self.check(other)?;
        let extra = other.difference(self)?;
        let mut boxes = self.boxes.clone();
        boxes.extend(extra.boxes);
        Ok(RegionSet {
            binding: self.binding,
            boxes: coalesce(boxes),
            flat: self.flat.union(&other.flat),
        })
    }

    /// Element-wise set equality, independent of box decomposition.
    pub fn set_eq(&self, other: &RegionSet) -> Result<bool> {
        Ok(self.difference(other)?.is_empty() && other.difference(self)?.is_empty())
    }

    /// The part of this set lying in one tensor.
    pub fn restrict_to_tensor(&self, tensor: usize) -> RegionSet {
        RegionSet {
            binding: self.binding,
            boxes: tensor_slice(&self.boxes, tensor).to_vec(),
            flat: IntervalSet::new(),
        }
    }
}

/// Boxes of one tensor inside a tensor-sorted slice.
fn tensor_slice(boxes: &[TensorBox], tensor: usize) -> &[TensorBox] {
    let lo = boxes.partition_point(|b| b.tensor < tensor);
    let hi = boxes.partition_point(|b| b.tensor <= tensor);
    &boxes[lo..hi]
}

/// Merges disjoint boxes that abut along exactly one axis, until no pair
/// merges. Output is sorted.
fn coalesce(mut boxes: Vec<TensorBox>) -> Vec<TensorBox> {
    boxes.retain(|b| !b.is_empty());
    let max_rank = boxes.iter().map(|b| b.dims.len()).max().unwrap_or(0);
    loop {
        let mut changed = false;
        for axis in (0..max_rank).rev() {
            boxes.sort_by(|a, b| cmp_excluding(a, b, axis));
            let mut out: Vec<TensorBox> = Vec::with_capacity(boxes.len());
            for b in boxes.drain(..) {
                if let Some(last) = out.last_mut() {
                    if axis < b.dims.len()
                        && last.tensor == b.tensor
                        && last.dims.len() == b.dims.len()
                        && last.dims[axis].hi == b.dims[axis].lo
                        && equal_excluding(last, &b, axis)
                    {
                        last.dims[axis].hi = b.dims[axis].hi;
                        changed = true;
                        continue;
                    }
                }
                out.push(b);
            }
            boxes = out;
        }
        if !changed {
            break;
        }
    }
    boxes.sort();
    boxes
}

fn equal_excluding(a: &TensorBox, b: &TensorBox, axis: usize) -> bool {
    a.dims.iter().zip(&b.dims).enumerate().all(|(i, (x, y))| i == axis || x == y)
}

fn cmp_excluding(a: &TensorBox, b: &TensorBox, axis: usize) -> Ordering {
    a.tensor
        .cmp(&b.tensor)
        .then(a.dims.len().cmp(&b.dims.len()))
        .then_with(|| {
            let ka = a.dims.iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, s)| s);
            let kb = b.dims.iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, s)| s);
            ka.cmp(kb)
        })
        .then(a.dims.get(axis).cmp(&b.dims.get(axis)))
}
