//! Device management across scale events: communicator group caching and
//! timeline accounting for background world initialization.

mod groups;
mod scale;

pub use groups::{get_or_create_groups, GroupCache, GroupSet};
pub use scale::{
    format_timeline, overlap_ratio, simulate_scale_event, InitCostTable, Phase, ScaleMode, ScaleTimeline,
    WorldTransition,
};
