//! Model description, parallel configurations and the parameter space they
//! project.

mod config;
mod model;
pub mod region;
mod size;
mod space;

pub use config::{ParallelConfig, RankCoord, RankOrder};
pub use model::{ModelSpec, TensorSpec};
pub use region::{IntervalSet, RegionSet, Span, TensorBox, VpsId};
pub use size::{estimate_bytes_for_numel, estimate_state_bytes, PrecisionPolicy};
pub use space::{build_vps, zero_shard, Vps};
