use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::routing::{StateKind, WorldMap, SCALAR_SLOTS};
use crate::topology::{Device, Topology};
use crate::vps::{ParallelConfig, RegionSet, Vps};
use crate::Result;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Canonical payload of element `k` of a state kind. Rank-independent, so
/// replicas agree by construction.
pub fn canon(seed: u64, k: u64, kind: StateKind) -> u64 {
    let stream = splitmix64(seed ^ (kind.index() as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(stream ^ k)
}

/// Element payloads held by one device, per state kind.
pub type Payloads = [BTreeMap<u64, u64>; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankStatus {
    Running,
    Blocked(Device),
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankState {
    pub device: Device,
    pub stores: Payloads,
    /// Live transient buffer bytes.
    pub mem_current: u64,
    pub mem_peak: u64,
    pub status: RankStatus,
}

impl RankState {
    pub fn new(device: Device) -> Self {
        Self { device, stores: Default::default(), mem_current: 0, mem_peak: 0, status: RankStatus::Running }
    }

    pub fn store(&self, kind: StateKind) -> &BTreeMap<u64, u64> {
        &self.stores[kind.index()]
    }

    pub fn store_mut(&mut self, kind: StateKind) -> &mut BTreeMap<u64, u64> {
        &mut self.stores[kind.index()]
    }

    pub fn element_count(&self) -> usize {
        self.stores.iter().map(BTreeMap::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub topology: Topology,
    pub ranks: Vec<RankState>,
    /// Per-device cap on transient buffer bytes.
    pub mem_cap: Option<u64>,
}

impl Cluster {
    pub fn new(topology: Topology, devices: u32) -> Self {
        Self { topology, ranks: (0..devices).map(RankState::new).collect(), mem_cap: None }
    }

    pub fn with_mem_cap(mut self, cap: u64) -> Self {
        self.mem_cap = Some(cap);
        self
    }

    pub fn payloads(&self) -> Vec<Payloads> {
        self.ranks.iter().map(|r| r.stores.clone()).collect()
    }

    /// Resets memory accounting and status, keeping payloads.
    pub fn reset_runtime(&mut self) {
        for r in &mut self.ranks {
            r.mem_current = 0;
            r.mem_peak = 0;
            r.status = RankStatus::Running;
        }
    }
}

fn fill(vps: &Vps, store: &mut BTreeMap<u64, u64>, region: &RegionSet, seed: u64, kind: StateKind) {
    for s in vps.to_flat(region).spans() {
        for k in s.lo..s.hi {
            store.insert(k, canon(seed, k, kind));
        }
    }
}

/// Populates every device of `world`'s source side with the state `cfg`
/// assigns it: parameters, gradients, optimizer state and scalars. Other
/// devices are cleared.
pub fn load_state(cluster: &mut Cluster, vps: &Vps, cfg: &ParallelConfig, world: &WorldMap, seed: u64) -> Result<()> {
    cfg.validate_for(vps.model())?;
    for r in &mut cluster.ranks {
        r.stores = Default::default();
    }
    for (rank, &dev) in world.src_world().iter().enumerate() {
        let params = vps.project(cfg, rank as u32)?;
        let optim = vps.optimizer_region(cfg, rank as u32)?;
        let state = &mut cluster.ranks[dev as usize];
        fill(vps, state.store_mut(StateKind::Parameter), &params, seed, StateKind::Parameter);
        fill(vps, state.store_mut(StateKind::Gradient), &params, seed, StateKind::Gradient);
        fill(vps, state.store_mut(StateKind::Optimizer), &optim, seed, StateKind::Optimizer);
        let scalars = state.store_mut(StateKind::Scalar);
        for slot in 0..SCALAR_SLOTS {
            scalars.insert(slot, canon(seed, slot, StateKind::Scalar));
        }
    }
    cluster.reset_runtime();
    Ok(())
}
