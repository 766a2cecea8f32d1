use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use crate::routing::{region_of, Fragment, SliceTransfer, StateKind};
use crate::topology::{Device, Topology};
use crate::vps::Vps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CollectiveKind {
    Broadcast,
    Scatter,
    Gather,
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CollectiveKind::Broadcast => "broadcast",
            CollectiveKind::Scatter => "scatter",
            CollectiveKind::Gather => "gather",
        })
    }
}

/// A collective replacing a group of point-to-point transfers of one logical
/// tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommOp {
    pub kind: CollectiveKind,
    pub state: StateKind,
    /// Source of a broadcast or scatter, destination of a gather.
    pub root: Device,
    /// Sorted, duplicate-free, root included.
    pub participants: Vec<Device>,
    /// The point-to-point transfers this op replaces, in packing order.
    pub payload: Vec<SliceTransfer>,
    /// Sum of the replaced transfers' bytes.
    pub bytes: u64,
}

impl CommOp {
    /// The point-to-point pairs this collective stands for.
    pub fn decompose(&self) -> Vec<SliceTransfer> {
        self.payload.clone()
    }

    /// Transient buffer bytes each participant holds while the op runs.
    pub fn buffer_bytes(&self, device: Device) -> u64 {
        match self.kind {
            CollectiveKind::Broadcast => {
                // one copy of the broadcast payload everywhere
                let first = self.payload.first().map(|t| t.dst);
                let copy: u64 = self.payload.iter().filter(|t| Some(t.dst) == first).map(|t| t.bytes).sum();
                if self.participants.contains(&device) {
                    copy
                } else {
                    0
                }
            }
            CollectiveKind::Scatter | CollectiveKind::Gather => {
                if device == self.root {
                    self.bytes
                } else {
                    self.payload.iter().filter(|t| t.src == device || t.dst == device).map(|t| t.bytes).sum()
                }
            }
        }
    }

    pub fn max_buffer_bytes(&self) -> u64 {
        self.participants.iter().map(|&d| self.buffer_bytes(d)).max().unwrap_or(0)
    }
}

/// Key grouping transfers by logical tensor. Flat optimizer intervals and the
/// scalar blob each form one group per state kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LogicalKey {
    Tensor(StateKind, usize),
    Flat(StateKind),
}

fn key_of(t: &SliceTransfer) -> LogicalKey {
    match &t.fragment {
        Fragment::Box(b) => LogicalKey::Tensor(t.kind, b.tensor),
        Fragment::Flat(_) => LogicalKey::Flat(t.kind),
    }
}

/// Whether `frags` are pairwise disjoint and together form one box or one
/// interval.
fn is_contiguous(vps: &Vps, frags: &[&Fragment]) -> bool {
    let region = region_of(vps, frags.iter().copied());
    let total: u64 = frags.iter().map(|f| f.numel()).sum();
    total == region.numel() && region.boxes().len() + region.flat().spans().len() == 1
}

/// Groups a pruned point-to-point plan by logical tensor and promotes groups
/// to broadcast, scatter or gather where source/destination cardinality and
/// slice shape allow. Returns the collectives and the residual transfers.
///
/// Proximity pruning already happened during peer resolution, so every
/// destination element has exactly one source here.
pub fn optimize_primitives(
    vps: &Vps,
    transfers: &[SliceTransfer],
    _topo: &Topology,
) -> (Vec<CommOp>, Vec<SliceTransfer>) {
    debug_assert!(single_sourced(vps, transfers));
    let mut groups: BTreeMap<LogicalKey, Vec<&SliceTransfer>> = BTreeMap::new();
    for t in transfers {
        groups.entry(key_of(t)).or_default().push(t);
    }
    let mut collectives = Vec::new();
    let mut residual = Vec::new();
    for (key, group) in groups {
        let srcs: BTreeSet<Device> = group.iter().map(|t| t.src).collect();
        let dsts: BTreeSet<Device> = group.iter().map(|t| t.dst).collect();
        let state = match key {
            LogicalKey::Tensor(k, _) | LogicalKey::Flat(k) => k,
        };
        let kind = if srcs.len() == 1 && dsts.len() > 1 {
            if identical_per_destination(&group, &dsts) {
                Some(CollectiveKind::Broadcast)
            } else if one_each(&group, |t| t.dst) && is_contiguous(vps, &frags(&group)) {
                Some(CollectiveKind::Scatter)
            } else {
                None
            }
        } else if srcs.len() > 1 && dsts.len() == 1 {
            (one_each(&group, |t| t.src) && is_contiguous(vps, &frags(&group))).then_some(CollectiveKind::Gather)
        } else {
            None
        };
        match kind {
            Some(kind) => {
                let root = match kind {
                    CollectiveKind::Gather => *dsts.first().unwrap(),
                    _ => *srcs.first().unwrap(),
                };
                let mut payload: Vec<SliceTransfer> = group.iter().map(|&t| t.clone()).collect();
                payload.sort_by(|a, b| (a.src, a.dst).cmp(&(b.src, b.dst)).then_with(|| a.cmp_packing(b, vps)));
                let participants: Vec<Device> = srcs.union(&dsts).copied().collect();
                let bytes = payload.iter().map(|t| t.bytes).sum();
                collectives.push(CommOp { kind, state, root, participants, payload, bytes });
            }
            None => residual.extend(group.into_iter().cloned()),
        }
    }
    crate::routing::sort_transfers(&mut residual, vps);
    (collectives, residual)
}

fn frags<'a>(group: &[&'a SliceTransfer]) -> Vec<&'a Fragment> {
    group.iter().map(|t| &t.fragment).collect()
}

fn one_each(group: &[&SliceTransfer], by: impl Fn(&SliceTransfer) -> Device) -> bool {
    let distinct: BTreeSet<Device> = group.iter().map(|t| by(t)).collect();
    distinct.len() == group.len()
}

fn identical_per_destination(group: &[&SliceTransfer], dsts: &BTreeSet<Device>) -> bool {
    let mut per_dst: BTreeMap<Device, Vec<&Fragment>> = BTreeMap::new();
    for t in group {
        per_dst.entry(t.dst).or_default().push(&t.fragment);
    }
    for v in per_dst.values_mut() {
        v.sort();
    }
    let first = &per_dst[dsts.first().unwrap()];
    per_dst.values().all(|v| v == first)
}

fn single_sourced(vps: &Vps, transfers: &[SliceTransfer]) -> bool {
    let mut by_dst: BTreeMap<(Device, StateKind), Vec<&Fragment>> = BTreeMap::new();
    for t in transfers {
        by_dst.entry((t.dst, t.kind)).or_default().push(&t.fragment);
    }
    by_dst.values().all(|f| {
        let total: u64 = f.iter().map(|x| x.numel()).sum();
        region_of(vps, f.iter().copied()).numel() == total
    })
}
