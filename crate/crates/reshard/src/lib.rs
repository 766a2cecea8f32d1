//! File formats, reports and commands around [`reshard_core`]: scenario
//! files, plan and schedule dumps, randomized campaigns and the `reshard`
//! command-line tool.

pub mod campaign;
pub mod commands;
pub mod dump;
pub mod pipeline;
pub mod scenario;

pub use pipeline::{Failure, Prepared};
pub use scenario::{Scenario, ScenarioError};
