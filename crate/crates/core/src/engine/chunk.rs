use alloc::vec::Vec;

use crate::{Error, Result};

/// Transient-buffer cost of one logical step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepCost {
    pub step: u32,
    pub cost: u64,
}

/// Global memory budget: the minimum available memory over all ranks.
pub fn global_min(mem_avail: &[u64]) -> u64 {
    mem_avail.iter().copied().min().unwrap_or(u64::MAX)
}

/// Greedily packs steps, in the given order, into stages whose summed cost
/// stays within the global-minimum budget. A step that would overflow the
/// running stage opens a new one.
pub fn memory_aware_chunk(steps: &[StepCost], mem_avail: &[u64]) -> Result<Vec<Vec<StepCost>>> {
    let budget = global_min(mem_avail);
    if let Some(s) = steps.iter().find(|s| s.cost > budget) {
        return Err(Error::InfeasibleBudget { step: s.step, cost: s.cost, budget });
    }
    let mut stages = Vec::new();
    let mut current: Vec<StepCost> = Vec::new();
    let mut current_mem = 0u64;
    for &s in steps {
        if current_mem + s.cost > budget {
            stages.push(core::mem::take(&mut current));
            current_mem = 0;
        }
        current.push(s);
        current_mem += s.cost;
    }
    if !current.is_empty() {
        stages.push(current);
    }
    Ok(stages)
}
