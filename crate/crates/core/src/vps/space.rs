use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::region::{box_local_range_to_flat, IntervalSet, RegionSet, Span, TensorBox, VpsId};
use super::{ModelSpec, ParallelConfig, RankCoord, TensorSpec};
use crate::{Error, Result};

/// The global parameter space: every tensor unsharded, laid out in
/// declaration order over one gap-free flat offset range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vps {
    model: ModelSpec,
    offsets: Vec<u64>,
    total_numel: u64,
    index: BTreeMap<String, usize>,
    id: VpsId,
}

/// Builds the parameter space of a model.
pub fn build_vps(model: ModelSpec) -> Result<Vps> {
    model.validate()?;
    let mut offsets = Vec::with_capacity(model.tensors.len());
    let mut off = 0u64;
    let mut index = BTreeMap::new();
    let mut hash = Fnv::default();
    hash.u64(u64::from(model.num_layers));
    hash.u64(u64::from(model.num_experts));
    for (i, t) in model.tensors.iter().enumerate() {
        offsets.push(off);
        off += t.numel();
        index.insert(t.id.clone(), i);
        hash.bytes(t.id.as_bytes());
        hash.u64(t.shape.len() as u64);
        t.shape.iter().for_each(|&e| hash.u64(e));
        hash.u64(u64::from(t.layer));
        hash.u64(t.tp_shard_axis.map_or(u64::MAX, |a| a as u64));
        hash.u64(t.expert_axis.map_or(u64::MAX, |a| a as u64));
    }
    Ok(Vps { model, offsets, total_numel: off, index, id: VpsId(hash.0) })
}

impl Vps {
    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn id(&self) -> VpsId {
        self.id
    }

    pub fn total_numel(&self) -> u64 {
        self.total_numel
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.model.tensors
    }

    pub fn tensor(&self, i: usize) -> &TensorSpec {
        &self.model.tensors[i]
    }

    pub fn offset(&self, i: usize) -> u64 {
        self.offsets[i]
    }

    pub fn tensor_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn empty_region(&self) -> RegionSet {
        RegionSet::empty(self.id)
    }

    /// The whole space as one full box per tensor.
    pub fn full_region(&self) -> RegionSet {
        RegionSet::from_boxes(
            self.id,
            self.model.tensors.iter().enumerate().map(|(i, t)| TensorBox::full(i, &t.shape)),
        )
    }

    /// Tensor and multi-index of a flat offset.
    pub fn locate(&self, k: u64) -> Option<(usize, Vec<u64>)> {
        if k >= self.total_numel {
            return None;
        }
        let i = self.offsets.partition_point(|&o| o <= k) - 1;
        let shape = &self.model.tensors[i].shape;
        let mut rem = k - self.offsets[i];
        let mut idx = alloc::vec![0u64; shape.len()];
        for a in (0..shape.len()).rev() {
            idx[a] = rem % shape[a];
            rem /= shape[a];
        }
        Some((i, idx))
    }

    pub fn box_flat_runs(&self, b: &TensorBox) -> Vec<Span> {
        b.flat_runs(&self.model.tensors[b.tensor].shape, self.offsets[b.tensor])
    }

    /// Flat offsets covered by a region (boxes and flat part).
    pub fn to_flat(&self, r: &RegionSet) -> IntervalSet {
        let runs = r.boxes().iter().flat_map(|b| self.box_flat_runs(b));
        IntervalSet::from_spans(runs.chain(r.flat().spans().iter().copied()))
    }

    /// Whether a flat offset is in a region, by box membership for the box
    /// part.
    pub fn contains(&self, r: &RegionSet, k: u64) -> bool {
        if r.flat().contains(k) {
            return true;
        }
        match self.locate(k) {
            Some((t, idx)) => r.boxes().iter().any(|b| b.tensor == t && b.contains_index(&idx)),
            None => false,
        }
    }

    /// Boxes of the model partition at one (pp, tp, ep) position, restricted
    /// to dense or expert tensors.
    fn partition_boxes(&self, cfg: &ParallelConfig, c: RankCoord, expert: bool) -> Vec<TensorBox> {
        let layers = cfg.stage_layers(self.model.num_layers, c.pp_rank);
        let ep_rank = cfg.ep_rank(c);
        let mut out = Vec::new();
        for (i, t) in self.model.tensors.iter().enumerate() {
            if t.is_expert() != expert || !layers.contains(&t.layer) {
                continue;
            }
            let mut b = TensorBox::full(i, &t.shape);
            if let Some(axis) = t.tp_shard_axis {
                let w = t.shape[axis] / u64::from(cfg.tp);
                let lo = w * u64::from(c.tp_rank);
                b.dims[axis] = Span::new(lo, lo + w);
            }
            if let Some(axis) = t.expert_axis {
                let w = t.shape[axis] / u64::from(cfg.ep);
                let lo = w * u64::from(ep_rank);
                b.dims[axis] = Span::new(lo, lo + w);
            }
            out.push(b);
        }
        out
    }

    /// Parameter region of `rank` under `cfg`.
    pub fn project(&self, cfg: &ParallelConfig, rank: u32) -> Result<RegionSet> {
        cfg.validate_for(&self.model)?;
        let c = cfg.coord(rank)?;
        let mut boxes = self.partition_boxes(cfg, c, false);
        boxes.extend(self.partition_boxes(cfg, c, true));
        Ok(RegionSet::from_boxes(self.id, boxes))
    }

    /// ZeRO optimizer shard of `rank` as global flat intervals.
    ///
    /// Dense and expert elements of the rank's model partition form two local
    /// buffers in declaration order (row-major within each tensor slice).
    /// The dense buffer is split over the dp group, the expert buffer over the
    /// expert-dp group, with `ceil(L / n)` sized shards and a truncated last
    /// shard.
    pub fn project_optimizer(&self, cfg: &ParallelConfig, rank: u32) -> Result<RegionSet> {
        if !cfg.zero {
            return Err(Error::NoShardedOptimizer);
        }
        cfg.validate_for(&self.model)?;
        let c = cfg.coord(rank)?;
        let mut spans = Vec::new();
        for (expert, groups, member) in
            [(false, cfg.dp, c.dp_rank), (true, cfg.edp(), cfg.edp_rank(c))]
        {
            let boxes = self.partition_boxes(cfg, c, expert);
            let len: u64 = boxes.iter().map(TensorBox::numel).sum();
            let range = zero_shard(len, groups, member);
            spans.extend(self.invert_local_range(&boxes, range));
        }
        Ok(RegionSet::from_flat(self.id, IntervalSet::from_spans(spans)))
    }

    /// Maps local positions of a flattened box list back to global offsets.
    pub fn invert_local_range(&self, boxes: &[TensorBox], range: Span) -> Vec<Span> {
        let mut out = Vec::new();
        let mut pos = 0u64;
        for b in boxes {
            let n = b.numel();
            if let Some(cut) = Span::new(pos, pos + n).intersect(&range) {
                let t = &self.model.tensors[b.tensor];
                out.extend(box_local_range_to_flat(
                    b,
                    &t.shape,
                    self.offsets[b.tensor],
                    cut.lo - pos,
                    cut.hi - pos,
                ));
            }
            pos += n;
        }
        out
    }

    /// Optimizer-state region: the ZeRO shard when sharding is on, otherwise
    /// the flat image of the parameter region.
    pub fn optimizer_region(&self, cfg: &ParallelConfig, rank: u32) -> Result<RegionSet> {
        if cfg.zero {
            self.project_optimizer(cfg, rank)
        } else {
            let p = self.project(cfg, rank)?;
            Ok(RegionSet::from_flat(self.id, self.to_flat(&p)))
        }
    }

    /// Parameter region expressed as flat intervals.
    pub fn flat_region(&self, r: &RegionSet) -> RegionSet {
        RegionSet::from_flat(self.id, self.to_flat(r))
    }
}

/// Local range owned by `member` of `groups` over a buffer of length `len`.
pub fn zero_shard(len: u64, groups: u32, member: u32) -> Span {
    let chunk = len.div_ceil(u64::from(groups));
    let lo = (chunk * u64::from(member)).min(len);
    let hi = (chunk * (u64::from(member) + 1)).min(len);
    Span::new(lo, hi)
}

#[derive(Clone, Copy)]
struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn bytes(&mut self, b: &[u8]) {
        for &x in b {
            self.0 ^= u64::from(x);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        self.bytes_sep();
    }

    fn bytes_sep(&mut self) {
        self.0 ^= 0xff;
        self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
    }

    fn u64(&mut self, v: u64) {
        for x in v.to_le_bytes() {
            self.0 ^= u64::from(x);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
