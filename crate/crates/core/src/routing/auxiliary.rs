//! Dataset-position and scalar-state plans.

use alloc::vec::Vec;
use core::ops::Range;

use super::transfer::{Fragment, SliceTransfer, StateKind, SCALAR_SLOTS, SCALAR_SLOT_BYTES};
use super::WorldMap;
use crate::vps::{ParallelConfig, Span};
use crate::{Device, Error, Result};

/// Batch geometry after the switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchGeometry {
    pub global_batch: u64,
    pub micro_batch: u64,
}

/// Where each new dp rank resumes reading so the sample stream continues
/// without gaps or repeats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataloaderPlan {
    pub consumed_samples: u64,
    pub global_batch: u64,
    pub dp: u32,
    pub samples_per_rank: u64,
    pub micro_batches_per_rank: u64,
    /// First sample index of each new dp rank in the first post-switch step.
    pub resume_offsets: Vec<u64>,
}

impl DataloaderPlan {
    /// Sample indices assigned to `dp_rank` in post-switch step `step`.
    pub fn assignment(&self, step: u64, dp_rank: u32) -> Range<u64> {
        let lo = self.consumed_samples + step * self.global_batch + u64::from(dp_rank) * self.samples_per_rank;
        lo..lo + self.samples_per_rank
    }
}

/// Resumes the data stream at `consumed_samples` under the destination
/// config, giving each dp rank a contiguous block of every global batch.
pub fn plan_dataset(
    _src_cfg: &ParallelConfig,
    dst_cfg: &ParallelConfig,
    consumed_samples: u64,
    batch: BatchGeometry,
) -> Result<DataloaderPlan> {
    let dp = dst_cfg.dp;
    let unit = u64::from(dp) * batch.micro_batch;
    if batch.micro_batch == 0 || batch.global_batch == 0 || batch.global_batch % unit != 0 {
        return Err(Error::InvalidBatchGeometry {
            global_batch: batch.global_batch,
            dp,
            micro_batch: batch.micro_batch,
        });
    }
    let per_rank = batch.global_batch / u64::from(dp);
    Ok(DataloaderPlan {
        consumed_samples,
        global_batch: batch.global_batch,
        dp,
        samples_per_rank: per_rank,
        micro_batches_per_rank: per_rank / batch.micro_batch,
        resume_offsets: (0..u64::from(dp)).map(|r| consumed_samples + r * per_rank).collect(),
    })
}

/// Broadcast of the replicated scalar blob from source rank 0 to devices that
/// join the destination world.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalarBroadcast {
    pub root: Device,
    pub receivers: Vec<Device>,
    pub slots: u64,
}

impl ScalarBroadcast {
    pub fn bytes(&self) -> u64 {
        self.slots * SCALAR_SLOT_BYTES
    }

    pub fn is_noop(&self) -> bool {
        self.receivers.is_empty()
    }

    pub fn transfers(&self) -> Vec<SliceTransfer> {
        self.receivers
            .iter()
            .map(|&dst| SliceTransfer {
                kind: StateKind::Scalar,
                fragment: Fragment::Flat(Span::new(0, self.slots)),
                src: self.root,
                dst,
                bytes: self.bytes(),
            })
            .collect()
    }
}

pub fn plan_scalars(world: &WorldMap) -> ScalarBroadcast {
    let root = world.src_world()[0];
    let mut receivers = world.joining();
    receivers.sort_unstable();
    ScalarBroadcast { root, receivers, slots: SCALAR_SLOTS }
}
