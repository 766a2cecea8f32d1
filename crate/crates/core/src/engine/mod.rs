//! Transition engine: collective promotion, XOR pairing, memory-aware
//! chunking into stages, and buffer layouts.

mod chunk;
mod primitives;
mod schedule;
mod xor;

pub use chunk::{global_min, memory_aware_chunk, StepCost};
pub use primitives::{optimize_primitives, CollectiveKind, CommOp};
pub use schedule::{
    build_schedule, pack_layout, BufferSlot, DeviceLayout, PeerBuffer, Release, ScheduleOptions, Stage,
    TransitionSchedule,
};
pub use xor::{step_bound, xor_peer, xor_schedule};
