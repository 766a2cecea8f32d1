//! Planning and simulation core for online resharding of distributed training
//! state.
//!
//! Every tensor of a model lives unsharded in a single flat coordinate space
//! (the [`vps::Vps`]). A [`vps::ParallelConfig`] projects that space onto
//! per-rank [`vps::RegionSet`]s; the [`routing`] planner intersects source and
//! destination projections into send/receive/retain sets, the [`engine`]
//! turns them into a staged, XOR-paired schedule, and [`sim`] executes the
//! schedule on virtual ranks so the result can be checked bit for bit.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod elastic;
pub mod engine;
mod error;
pub mod routing;
pub mod sim;
pub mod topology;
pub mod vps;

pub use error::{Error, Result};
pub use topology::{Device, Topology};
