//! Deterministic simulated cluster: canonical payload stores, a blocking
//! message transport with deadlock detection, an analytic time model and a
//! per-device memory ledger.

mod execute;
mod state;
mod transport;
mod verify;

pub use execute::{
    execute, execute_with, format_report, ExecMode, ExecOptions, ExecReport, PairOrder, TraceEvent,
};
pub use state::{canon, load_state, Cluster, Payloads, RankState, RankStatus};
pub use transport::{drive, Delivery, Handler, Op, Outcome};
pub use verify::{oracle_reshard, verify_state, Issue, StateViolation};
