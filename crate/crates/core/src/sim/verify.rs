use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use super::state::{canon, Cluster, Payloads};
use crate::routing::{GradientMode, StateKind, WorldMap, SCALAR_SLOTS};
use crate::topology::Device;
use crate::vps::{ParallelConfig, RegionSet, Vps};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Issue {
    Wrong { expected: u64, found: u64 },
    Missing,
    /// Held but not owned under the destination layout.
    Unexpected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateViolation {
    pub device: Device,
    pub kind: StateKind,
    pub k: u64,
    pub issue: Issue,
}

impl fmt::Display for StateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (d, kind, k) = (self.device, self.kind, self.k);
        match self.issue {
            Issue::Wrong { expected, found } => {
                write!(f, "rank {d} {kind} element {k}: expected {expected:#018x}, found {found:#018x}")
            }
            Issue::Missing => write!(f, "rank {d} {kind} element {k}: missing"),
            Issue::Unexpected => write!(f, "rank {d} {kind} element {k}: not owned"),
        }
    }
}

fn owned_regions(
    vps: &Vps,
    cfg: &ParallelConfig,
    rank: u32,
    gradients: GradientMode,
) -> Result<[(StateKind, Option<RegionSet>); 3]> {
    let params = vps.project(cfg, rank)?;
    let grads = (gradients == GradientMode::Migrate).then(|| params.clone());
    Ok([
        (StateKind::Parameter, Some(params)),
        (StateKind::Optimizer, Some(vps.optimizer_region(cfg, rank)?)),
        (StateKind::Gradient, grads),
    ])
}

/// Element keys each device owns under `cfg` on `world`'s destination side.
fn ownership(
    vps: &Vps,
    cfg: &ParallelConfig,
    world: &WorldMap,
    devices: usize,
    gradients: GradientMode,
) -> Result<Vec<[Vec<u64>; 4]>> {
    let mut out: Vec<[Vec<u64>; 4]> = (0..devices).map(|_| Default::default()).collect();
    for (rank, &dev) in world.dst_world().iter().enumerate() {
        let slot = &mut out[dev as usize];
        for (kind, region) in owned_regions(vps, cfg, rank as u32, gradients)? {
            if let Some(r) = region {
                slot[kind.index()] = vps.to_flat(&r).spans().iter().flat_map(|s| s.lo..s.hi).collect();
            }
        }
        slot[StateKind::Scalar.index()] = (0..SCALAR_SLOTS).collect();
    }
    Ok(out)
}

/// Checks that every destination device holds exactly its owned elements
/// with canonical payloads.
pub fn verify_state(
    cluster: &Cluster,
    vps: &Vps,
    dst_cfg: &ParallelConfig,
    world: &WorldMap,
    seed: u64,
    gradients: GradientMode,
) -> Result<Vec<StateViolation>> {
    let owned = ownership(vps, dst_cfg, world, cluster.ranks.len(), gradients)?;
    let mut violations = Vec::new();
    for (rank, keys) in cluster.ranks.iter().zip(&owned) {
        for kind in StateKind::ALL {
            let store = rank.store(kind);
            let want = &keys[kind.index()];
            for &k in want {
                let expected = canon(seed, k, kind);
                match store.get(&k) {
                    None => violations.push(StateViolation { device: rank.device, kind, k, issue: Issue::Missing }),
                    Some(&found) if found != expected => violations.push(StateViolation {
                        device: rank.device,
                        kind,
                        k,
                        issue: Issue::Wrong { expected, found },
                    }),
                    Some(_) => {}
                }
            }
            if store.len() != want.len() {
                for &k in store.keys() {
                    if want.binary_search(&k).is_err() {
                        violations.push(StateViolation { device: rank.device, kind, k, issue: Issue::Unexpected });
                    }
                }
            }
        }
    }
    Ok(violations)
}

/// Reference resharding that ignores plans and schedules: gathers every
/// element from the first source device holding it, then hands each
/// destination device what it owns.
pub fn oracle_reshard(
    cluster: &Cluster,
    vps: &Vps,
    dst_cfg: &ParallelConfig,
    world: &WorldMap,
    gradients: GradientMode,
) -> Result<Vec<Payloads>> {
    let mut global: [BTreeMap<u64, u64>; 4] = Default::default();
    for &dev in world.src_world() {
        for kind in StateKind::ALL {
            for (&k, &v) in cluster.ranks[dev as usize].store(kind) {
                global[kind.index()].entry(k).or_insert(v);
            }
        }
    }
    let owned = ownership(vps, dst_cfg, world, cluster.ranks.len(), gradients)?;
    let mut out: Vec<Payloads> = (0..cluster.ranks.len()).map(|_| Default::default()).collect();
    for (dev, keys) in owned.iter().enumerate() {
        for kind in StateKind::ALL {
            for &k in &keys[kind.index()] {
                let v = global[kind.index()].get(&k).copied().ok_or_else(|| {
                    Error::Execution(format!("oracle: no source holds {kind} element {k}"))
                })?;
                out[dev][kind.index()].insert(k, v);
            }
        }
    }
    Ok(out)
}
