//! State routing: per-device send/receive/retain sets derived by region
//! algebra, proximity-based source selection, and the auxiliary dataset and
//! scalar plans.

mod auxiliary;
mod planner;
mod transfer;
mod validate;
mod world;

use alloc::vec::Vec;

pub use auxiliary::{plan_dataset, plan_scalars, BatchGeometry, DataloaderPlan, ScalarBroadcast};
pub use planner::{
    choose_source, fragments, plan_gradients, plan_optimizer, plan_parameters, plan_regions, region_bytes,
    region_of, resolve_peers, DevicePlan, RoutingPlan,
};
pub use transfer::{
    element_bytes, sort_transfers, Fragment, SliceTransfer, StateKind, SCALAR_SLOTS, SCALAR_SLOT_BYTES,
};
pub use validate::{validate_plan, validate_transition, PlanReport, Violation};
pub use world::WorldMap;

use crate::topology::Topology;
use crate::vps::{ParallelConfig, PrecisionPolicy, Vps};
use crate::Result;

/// What happens to gradients at the switch boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Switches happen between optimizer steps; gradients are released.
    #[default]
    Drop,
    Migrate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TransitionOptions {
    pub policy: PrecisionPolicy,
    pub gradients: GradientMode,
}

/// Resolved routing of every state kind for one transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionPlan {
    pub world: WorldMap,
    pub options: TransitionOptions,
    pub parameters: RoutingPlan,
    pub optimizer: RoutingPlan,
    pub gradients: Option<RoutingPlan>,
    pub scalars: ScalarBroadcast,
}

impl TransitionPlan {
    pub fn routing_plans(&self) -> impl Iterator<Item = &RoutingPlan> {
        [Some(&self.parameters), Some(&self.optimizer), self.gradients.as_ref()].into_iter().flatten()
    }

    /// Every transfer, scalars included, in dump order.
    pub fn transfers(&self, vps: &Vps) -> Vec<transfer::SliceTransfer> {
        let mut all: Vec<_> = self.routing_plans().flat_map(RoutingPlan::transfers).collect();
        all.extend(self.scalars.transfers());
        sort_transfers(&mut all, vps);
        all
    }

    pub fn bytes_moved(&self) -> u64 {
        self.routing_plans().map(RoutingPlan::bytes_moved).sum::<u64>()
            + self.scalars.bytes() * self.scalars.receivers.len() as u64
    }

    pub fn device_count(&self) -> u32 {
        self.world.device_count()
    }
}

/// Plans and resolves every state kind of a transition.
pub fn plan_transition(
    vps: &Vps,
    src_cfg: &ParallelConfig,
    dst_cfg: &ParallelConfig,
    world: &WorldMap,
    topo: &Topology,
    options: TransitionOptions,
) -> Result<TransitionPlan> {
    let policy = options.policy;
    let parameters = resolve_peers(vps, &plan_parameters(vps, src_cfg, dst_cfg, world, policy)?, topo)?;
    let optimizer = resolve_peers(vps, &plan_optimizer(vps, src_cfg, dst_cfg, world, policy)?, topo)?;
    let gradients = match options.gradients {
        GradientMode::Drop => None,
        GradientMode::Migrate => {
            Some(resolve_peers(vps, &plan_gradients(vps, src_cfg, dst_cfg, world, policy)?, topo)?)
        }
    };
    Ok(TransitionPlan {
        world: world.clone(),
        options,
        parameters,
        optimizer,
        gradients,
        scalars: plan_scalars(world),
    })
}
