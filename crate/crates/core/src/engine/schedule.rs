use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::chunk::{global_min, memory_aware_chunk, StepCost};
use super::primitives::{optimize_primitives, CommOp};
use super::xor::step_bound;
use crate::routing::{region_of, GradientMode, RoutingPlan, SliceTransfer, StateKind, TransitionOptions, TransitionPlan};
use crate::topology::{Device, Topology};
use crate::vps::{RegionSet, Vps};
use crate::Result;

/// One fragment's position inside a packed per-peer buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferSlot {
    pub transfer: SliceTransfer,
    /// Byte offset into the buffer.
    pub offset: u64,
}

/// Lays out transfers to a single peer in packing order. Sender and receiver
/// each call this on their own view and must agree.
pub fn pack_layout(vps: &Vps, transfers: impl IntoIterator<Item = SliceTransfer>) -> Vec<BufferSlot> {
    let mut v: Vec<SliceTransfer> = transfers.into_iter().collect();
    v.sort_by(|a, b| a.cmp_packing(b, vps));
    let mut offset = 0;
    v.into_iter()
        .map(|transfer| {
            let slot = BufferSlot { offset, transfer };
            offset += slot.transfer.bytes;
            slot
        })
        .collect()
}

/// The packed buffer exchanged from `src` to `dst` at one logical step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerBuffer {
    pub step: u32,
    pub src: Device,
    pub dst: Device,
    pub slots: Vec<BufferSlot>,
    pub bytes: u64,
}

/// Source-side state a device may free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Release {
    pub device: Device,
    pub kind: StateKind,
    pub region: RegionSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub index: usize,
    pub steps: Vec<StepCost>,
    /// Sorted by (step, src, dst).
    pub buffers: Vec<PeerBuffer>,
    /// Transient send plus receive bytes per device.
    pub rank_bytes: Vec<u64>,
    pub mem_cost: u64,
    /// Source-only state whose last use is this stage.
    pub release: Vec<Release>,
}

/// What a device keeps once the transition completes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceLayout {
    pub device: Device,
    /// Parameter, optimizer and gradient regions.
    pub regions: Vec<(StateKind, RegionSet)>,
    pub scalars: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleOptions {
    /// Promote eligible groups to broadcast, scatter or gather.
    pub collectives: bool,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self { collectives: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionSchedule {
    pub devices: u32,
    pub budget: u64,
    pub options: TransitionOptions,
    /// Run before the first stage.
    pub collectives: Vec<CommOp>,
    pub collective_release: Vec<Release>,
    pub stages: Vec<Stage>,
    /// Freed before the first stage: dropped gradients and source-only state
    /// nobody needs.
    pub free_list: Vec<Release>,
    pub final_layout: Vec<DeviceLayout>,
}

impl TransitionSchedule {
    /// Every point-to-point pair, collectives decomposed, in dump order.
    pub fn flatten(&self, vps: &Vps) -> Vec<SliceTransfer> {
        let mut all: Vec<SliceTransfer> = self.collectives.iter().flat_map(CommOp::decompose).collect();
        for s in &self.stages {
            all.extend(s.buffers.iter().flat_map(|b| b.slots.iter().map(|x| x.transfer.clone())));
        }
        crate::routing::sort_transfers(&mut all, vps);
        all
    }

    pub fn bytes_moved(&self) -> u64 {
        let c: u64 = self.collectives.iter().map(|c| c.bytes).sum();
        c + self.stages.iter().flat_map(|s| &s.buffers).map(|b| b.bytes).sum::<u64>()
    }

    /// Largest transient footprint on any device across all phases.
    pub fn peak_buffer_bytes(&self) -> u64 {
        let c = self.collectives.iter().map(CommOp::max_buffer_bytes).max().unwrap_or(0);
        self.stages.iter().map(|s| s.mem_cost).max().unwrap_or(0).max(c)
    }

    pub fn step_count(&self) -> usize {
        self.stages.iter().map(|s| s.steps.len()).sum()
    }

    /// Stage index running `step`, if any.
    pub fn stage_of(&self, step: u32) -> Option<usize> {
        self.stages.iter().position(|s| s.steps.iter().any(|c| c.step == step))
    }
}

/// Turns a resolved transition plan into collectives plus memory-bounded
/// stages of XOR-paired steps, with packing layouts and release lists.
pub fn build_schedule(
    vps: &Vps,
    plan: &TransitionPlan,
    topo: &Topology,
    mem_avail: &[u64],
    options: ScheduleOptions,
) -> Result<TransitionSchedule> {
    let n = plan.device_count();
    let budget = global_min(mem_avail);
    let transfers = plan.transfers(vps);
    let (mut collectives, mut residual) = if options.collectives {
        optimize_primitives(vps, &transfers, topo)
    } else {
        (Vec::new(), transfers)
    };
    // collectives whose buffers do not fit fall back to chunked point-to-point
    let (fit, spill): (Vec<CommOp>, Vec<CommOp>) = collectives.drain(..).partition(|c| c.max_buffer_bytes() <= budget);
    collectives = fit;
    if !spill.is_empty() {
        residual.extend(spill.iter().flat_map(CommOp::decompose));
        crate::routing::sort_transfers(&mut residual, vps);
    }

    let mut by_step: BTreeMap<u32, BTreeMap<(Device, Device), Vec<SliceTransfer>>> = BTreeMap::new();
    for t in residual {
        let step = t.src ^ t.dst;
        debug_assert!(step > 0 && step < step_bound(n));
        by_step.entry(step).or_default().entry((t.src, t.dst)).or_default().push(t);
    }
    let mut step_rank_bytes: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    let mut costs = Vec::new();
    for (&step, pairs) in &by_step {
        let mut rb = vec![0u64; n as usize];
        for ((src, dst), ts) in pairs {
            let b: u64 = ts.iter().map(|t| t.bytes).sum();
            rb[*src as usize] += b;
            rb[*dst as usize] += b;
        }
        let cost = rb.iter().copied().max().unwrap_or(0);
        if cost > 0 {
            costs.push(StepCost { step, cost });
        }
        step_rank_bytes.insert(step, rb);
    }
    let chunks = memory_aware_chunk(&costs, mem_avail)?;

    let mut stages = Vec::with_capacity(chunks.len());
    for (index, steps) in chunks.into_iter().enumerate() {
        let mut rank_bytes = vec![0u64; n as usize];
        let mut buffers = Vec::new();
        for c in &steps {
            for (r, b) in step_rank_bytes[&c.step].iter().enumerate() {
                rank_bytes[r] += b;
            }
            for ((src, dst), ts) in by_step.remove(&c.step).unwrap_or_default() {
                let slots = pack_layout(vps, ts);
                let bytes = slots.iter().map(|s| s.transfer.bytes).sum();
                buffers.push(PeerBuffer { step: c.step, src, dst, slots, bytes });
            }
        }
        let mem_cost = rank_bytes.iter().copied().max().unwrap_or(0);
        stages.push(Stage { index, steps, buffers, rank_bytes, mem_cost, release: Vec::new() });
    }

    let mut schedule = TransitionSchedule {
        devices: n,
        budget,
        options: plan.options,
        collectives,
        collective_release: Vec::new(),
        stages,
        free_list: Vec::new(),
        final_layout: final_layout(plan),
    };
    assign_releases(vps, plan, &mut schedule)?;
    Ok(schedule)
}

fn final_layout(plan: &TransitionPlan) -> Vec<DeviceLayout> {
    (0..plan.device_count())
        .map(|d| {
            let mut regions: Vec<(StateKind, RegionSet)> =
                plan.routing_plans().map(|p| (p.kind, p.devices[d as usize].dst.clone())).collect();
            if plan.gradients.is_none() {
                let empty = RegionSet::empty(plan.parameters.devices[d as usize].dst.binding());
                regions.push((StateKind::Gradient, empty));
            }
            regions.sort_by_key(|(k, _)| *k);
            DeviceLayout { device: d, regions, scalars: plan.world.dst_rank(d).is_some() }
        })
        .collect()
}

/// Computes per-phase release lists. Phase 0 is the collective phase, phase
/// `i + 1` is stage `i`.
fn assign_releases(vps: &Vps, plan: &TransitionPlan, schedule: &mut TransitionSchedule) -> Result<()> {
    let phases = schedule.stages.len() + 1;
    let mut releases: Vec<Vec<Release>> = vec![Vec::new(); phases];
    for routing in plan.routing_plans() {
        for dp in &routing.devices {
            let d = dp.device;
            let mut sent: Vec<RegionSet> = Vec::with_capacity(phases);
            let from_collectives = schedule
                .collectives
                .iter()
                .flat_map(|c| &c.payload)
                .filter(|t| t.src == d && t.kind == routing.kind)
                .map(|t| &t.fragment);
            sent.push(region_of(vps, from_collectives));
            for s in &schedule.stages {
                let frags = s
                    .buffers
                    .iter()
                    .filter(|b| b.src == d)
                    .flat_map(|b| &b.slots)
                    .filter(|x| x.transfer.kind == routing.kind)
                    .map(|x| &x.transfer.fragment);
                sent.push(region_of(vps, frags));
            }
            let src_only = &dp.send_set;
            let mut later = vps.empty_region();
            for p in (0..phases).rev() {
                let r = sent[p].intersect(src_only)?.difference(&later)?;
                later = later.union(&sent[p])?;
                if !r.is_empty() {
                    releases[p].push(Release { device: d, kind: routing.kind, region: r });
                }
            }
            let unused = src_only.difference(&later)?;
            if !unused.is_empty() {
                schedule.free_list.push(Release { device: d, kind: routing.kind, region: unused });
            }
        }
    }
    if plan.options.gradients == GradientMode::Drop {
        push_dropped_gradients(&plan.parameters, &mut schedule.free_list);
    }
    schedule.free_list.sort_by_key(|r| (r.device, r.kind));
    let mut it = releases.into_iter();
    schedule.collective_release = it.next().unwrap_or_default();
    for (stage, r) in schedule.stages.iter_mut().zip(it) {
        stage.release = r;
    }
    Ok(())
}

fn push_dropped_gradients(params: &RoutingPlan, out: &mut Vec<Release>) {
    for dp in &params.devices {
        if !dp.src.is_empty() {
            out.push(Release { device: dp.device, kind: StateKind::Gradient, region: dp.src.clone() });
        }
    }
}
