use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::transfer::{sort_transfers, Fragment, SliceTransfer, StateKind};
use super::WorldMap;
use crate::topology::{Device, Topology};
use crate::vps::{IntervalSet, ParallelConfig, PrecisionPolicy, RegionSet, Span, TensorBox, Vps};
use crate::{Error, Result};

/// Send/receive/retain decomposition of one device's state of one kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DevicePlan {
    pub device: Device,
    /// Region held under the source config (empty for joining devices).
    pub src: RegionSet,
    /// Region needed under the destination config (empty for leaving devices).
    pub dst: RegionSet,
    pub retain: RegionSet,
    /// `src \ dst`: everything this device could send.
    pub send_set: RegionSet,
    /// `dst \ src`: everything this device must receive.
    pub recv_set: RegionSet,
    /// Receive fragments with every source device holding them.
    pub candidates: Vec<(Fragment, Vec<Device>)>,
    /// Resolved outbound transfers (empty until peers are resolved).
    pub send: Vec<SliceTransfer>,
    /// Resolved inbound transfers (empty until peers are resolved).
    pub recv: Vec<SliceTransfer>,
}

/// Per-device routing of one state kind across a transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingPlan {
    pub kind: StateKind,
    pub world: WorldMap,
    pub policy: PrecisionPolicy,
    pub devices: Vec<DevicePlan>,
    pub resolved: bool,
}

impl RoutingPlan {
    /// Every resolved transfer once, in dump order.
    pub fn transfers(&self) -> Vec<SliceTransfer> {
        self.devices.iter().flat_map(|d| d.recv.iter().cloned()).collect()
    }

    pub fn bytes_moved(&self) -> u64 {
        self.devices.iter().flat_map(|d| &d.recv).map(|t| t.bytes).sum()
    }

    pub fn bytes_sent(&self) -> u64 {
        self.devices.iter().flat_map(|d| &d.send).map(|t| t.bytes).sum()
    }

    pub fn bytes_retained(&self, vps: &Vps) -> u64 {
        self.devices.iter().map(|d| region_bytes(vps, self.kind, &d.retain, self.policy)).sum()
    }

    /// Bytes of the raw send and receive sets, before peer resolution.
    pub fn raw_traffic_bytes(&self, vps: &Vps) -> u64 {
        self.devices
            .iter()
            .map(|d| {
                region_bytes(vps, self.kind, &d.send_set, self.policy)
                    + region_bytes(vps, self.kind, &d.recv_set, self.policy)
            })
            .sum()
    }
}

pub fn region_bytes(vps: &Vps, kind: StateKind, r: &RegionSet, policy: PrecisionPolicy) -> u64 {
    fragments(r)
        .iter()
        .map(|f| f.numel() * super::transfer::element_bytes(vps, kind, f, policy))
        .sum()
}

/// Splits a region set into its boxes and flat intervals.
pub fn fragments(r: &RegionSet) -> Vec<Fragment> {
    let boxes = r.boxes().iter().cloned().map(Fragment::Box);
    boxes.chain(r.flat().spans().iter().copied().map(Fragment::Flat)).collect()
}

/// Region set covering a list of fragments.
pub fn region_of<'a>(vps: &Vps, frags: impl IntoIterator<Item = &'a Fragment>) -> RegionSet {
    let mut boxes = Vec::new();
    let mut spans = Vec::new();
    for f in frags {
        match f {
            Fragment::Box(b) => boxes.push(b.clone()),
            Fragment::Flat(s) => spans.push(*s),
        }
    }
    let r = RegionSet::from_boxes(vps.id(), boxes);
    r.union(&RegionSet::from_flat(vps.id(), IntervalSet::from_spans(spans)))
        .expect("same binding")
}

/// Per-device source and destination regions of one kind.
pub(crate) fn device_regions(
    vps: &Vps,
    cfg: &ParallelConfig,
    world: &[Device],
    devices: u32,
    project: impl Fn(&ParallelConfig, u32) -> Result<RegionSet>,
) -> Result<Vec<RegionSet>> {
    let mut out = vec![vps.empty_region(); devices as usize];
    for (rank, &dev) in world.iter().enumerate() {
        out[dev as usize] = project(cfg, rank as u32)?;
    }
    Ok(out)
}

/// Send/receive/retain decomposition with candidate sources, from explicit
/// per-device regions.
pub fn plan_regions(
    vps: &Vps,
    kind: StateKind,
    world: &WorldMap,
    src: Vec<RegionSet>,
    dst: Vec<RegionSet>,
    policy: PrecisionPolicy,
) -> Result<RoutingPlan> {
    let n = world.device_count() as usize;
    debug_assert!(src.len() == n && dst.len() == n);
    let mut devices = Vec::with_capacity(n);
    for i in 0..n {
        let retain = src[i].intersect(&dst[i])?;
        let send_set = src[i].difference(&dst[i])?;
        let recv_set = dst[i].difference(&src[i])?;

        // Split the receive set into atoms with a uniform candidate set.
        let mut atoms: Vec<(RegionSet, Vec<Device>)> = vec![(recv_set.clone(), Vec::new())];
        if !recv_set.is_empty() {
            for (j, rj) in src.iter().enumerate() {
                if j == i || rj.is_empty() {
                    continue;
                }
                let mut next = Vec::with_capacity(atoms.len() + 1);
                for (r, c) in atoms {
                    let inside = r.intersect(rj)?;
                    if inside.is_empty() {
                        next.push((r, c));
                        continue;
                    }
                    let outside = r.difference(rj)?;
                    if !outside.is_empty() {
                        next.push((outside, c.clone()));
                    }
                    let mut with = c;
                    with.push(j as Device);
                    next.push((inside, with));
                }
                atoms = next;
            }
        }
        let mut candidates = Vec::new();
        for (r, c) in atoms {
            if r.is_empty() {
                continue;
            }
            if c.is_empty() {
                let desc = fragments(&r).iter().map(|f| format!("{} {f}", f.name(vps))).next();
                return Err(Error::UnreachableState {
                    device: i as Device,
                    region: format!("{} {}", kind, desc.unwrap_or_default()),
                });
            }
            candidates.extend(fragments(&r).into_iter().map(|f| (f, c.clone())));
        }
        devices.push(DevicePlan {
            device: i as Device,
            src: src[i].clone(),
            dst: dst[i].clone(),
            retain,
            send_set,
            recv_set,
            candidates,
            send: Vec::new(),
            recv: Vec::new(),
        });
    }
    Ok(RoutingPlan { kind, world: world.clone(), policy, devices, resolved: false })
}

/// Parameter plan with unresolved peers.
pub fn plan_parameters(
    vps: &Vps,
    src_cfg: &ParallelConfig,
    dst_cfg: &ParallelConfig,
    world: &WorldMap,
    policy: PrecisionPolicy,
) -> Result<RoutingPlan> {
    plan_box_kind(vps, StateKind::Parameter, src_cfg, dst_cfg, world, policy)
}

/// Gradient plan (migrate mode): parameter regions carrying gradients.
pub fn plan_gradients(
    vps: &Vps,
    src_cfg: &ParallelConfig,
    dst_cfg: &ParallelConfig,
    world: &WorldMap,
    policy: PrecisionPolicy,
) -> Result<RoutingPlan> {
    plan_box_kind(vps, StateKind::Gradient, src_cfg, dst_cfg, world, policy)
}

fn plan_box_kind(
    vps: &Vps,
    kind: StateKind,
    src_cfg: &ParallelConfig,
    dst_cfg: &ParallelConfig,
    world: &WorldMap,
    policy: PrecisionPolicy,
) -> Result<RoutingPlan> {
    src_cfg.validate_for(vps.model())?;
    dst_cfg.validate_for(vps.model())?;
    world.check_sizes(src_cfg.world_size(), dst_cfg.world_size())?;
    let n = world.device_count();
    let src = device_regions(vps, src_cfg, world.src_world(), n, |c, r| vps.project(c, r))?;
    let dst = device_regions(vps, dst_cfg, world.dst_world(), n, |c, r| vps.project(c, r))?;
    plan_regions(vps, kind, world, src, dst, policy)
}

/// Optimizer plan over flat intervals. With sharding on in both configs every
/// receive interval has exactly one holder; with sharding off in both the
/// optimizer state is replicated like the parameters.
pub fn plan_optimizer(
    vps: &Vps,
    src_cfg: &ParallelConfig,
    dst_cfg: &ParallelConfig,
    world: &WorldMap,
    policy: PrecisionPolicy,
) -> Result<RoutingPlan> {
    if src_cfg.zero != dst_cfg.zero {
        return Err(Error::ZeroMismatch);
    }
    src_cfg.validate_for(vps.model())?;
    dst_cfg.validate_for(vps.model())?;
    world.check_sizes(src_cfg.world_size(), dst_cfg.world_size())?;
    let n = world.device_count();
    let src = device_regions(vps, src_cfg, world.src_world(), n, |c, r| vps.optimizer_region(c, r))?;
    let dst = device_regions(vps, dst_cfg, world.dst_world(), n, |c, r| vps.optimizer_region(c, r))?;
    plan_regions(vps, StateKind::Optimizer, world, src, dst, policy)
}

/// Proximity choice: the lowest-id candidate on the receiver's node, else the
/// lowest-id candidate overall.
pub fn choose_source(candidates: &[Device], receiver: Device, topo: &Topology) -> Device {
    let lowest = |it: &mut dyn Iterator<Item = Device>| it.min();
    lowest(&mut candidates.iter().copied().filter(|&c| topo.same_node(c, receiver)))
        .or_else(|| lowest(&mut candidates.iter().copied()))
        .expect("candidate list is never empty")
}

/// Assigns one source per receive fragment and rebuilds the send lists from
/// the selections. Send-set fragments nobody selected are dropped.
pub fn resolve_peers(vps: &Vps, plan: &RoutingPlan, topo: &Topology) -> Result<RoutingPlan> {
    let mut out = plan.clone();
    for d in &mut out.devices {
        d.send.clear();
        d.recv.clear();
    }
    let mut sends: Vec<Vec<SliceTransfer>> = vec![Vec::new(); out.devices.len()];
    for d in &mut out.devices {
        let mut by_src: BTreeMap<Device, (Vec<TensorBox>, Vec<Span>)> = BTreeMap::new();
        for (frag, cands) in &d.candidates {
            let src = choose_source(cands, d.device, topo);
            let entry = by_src.entry(src).or_default();
            match frag {
                Fragment::Box(b) => entry.0.push(b.clone()),
                Fragment::Flat(s) => entry.1.push(*s),
            }
        }
        for (src, (boxes, spans)) in by_src {
            let merged = RegionSet::from_boxes(vps.id(), boxes);
            let flat = IntervalSet::from_spans(spans);
            let frags = merged
                .boxes()
                .iter()
                .cloned()
                .map(Fragment::Box)
                .chain(flat.spans().iter().copied().map(Fragment::Flat));
            for f in frags {
                let t = SliceTransfer::new(vps, plan.kind, f, src, d.device, plan.policy);
                sends[src as usize].push(t.clone());
                d.recv.push(t);
            }
        }
        sort_transfers(&mut d.recv, vps);
    }
    for (d, mut s) in out.devices.iter_mut().zip(sends) {
        sort_transfers(&mut s, vps);
        d.send = s;
    }
    out.resolved = true;
    Ok(out)
}
