use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised while building, planning or executing a transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    DuplicateTensor(String),
    ZeroExtent {
        tensor: String,
        axis: usize,
    },
    InvalidAxis {
        tensor: String,
        axis: usize,
        rank: usize,
    },
    ExpertAxisConflict(String),
    LayerOutOfRange {
        tensor: String,
        layer: u32,
        num_layers: u32,
    },
    ExpertExtent {
        tensor: String,
        extent: u64,
        num_experts: u64,
    },
    InvalidModel(&'static str),
    InvalidDegree(&'static str),
    EpDoesNotDivideDp {
        ep: u32,
        dp: u32,
    },
    PpExceedsLayers {
        pp: u32,
        num_layers: u32,
    },
    /// A parallel degree does not divide the extent it shards.
    Divisibility {
        tensor: String,
        axis: usize,
        extent: u64,
        degree: u32,
        dim: &'static str,
    },
    RankOutOfRange {
        rank: u32,
        world_size: u32,
    },
    VpsMismatch,
    NoShardedOptimizer,
    ZeroMismatch,
    UnreachableState {
        device: u32,
        region: String,
    },
    InvalidWorldMap(String),
    InvalidTopology(&'static str),
    InfeasibleBudget {
        step: u32,
        cost: u64,
        budget: u64,
    },
    InvalidBatchGeometry {
        global_batch: u64,
        dp: u32,
        micro_batch: u64,
    },
    UnknownPolicy(String),
    /// A rank's program hit an inconsistency while executing a schedule.
    Execution(String),
    OutOfMemory {
        device: u32,
        stage: usize,
        requested: u64,
        cap: u64,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DuplicateTensor(id) => write!(f, "duplicate tensor id `{id}`"),
            Error::ZeroExtent { tensor, axis } => {
                write!(f, "tensor `{tensor}` has zero extent on axis {axis}")
            }
            Error::InvalidAxis { tensor, axis, rank } => {
                write!(f, "tensor `{tensor}`: axis {axis} out of range for rank-{rank} shape")
            }
            Error::ExpertAxisConflict(id) => {
                write!(f, "tensor `{id}`: expert axis coincides with the tensor-parallel axis")
            }
            Error::LayerOutOfRange { tensor, layer, num_layers } => {
                write!(f, "tensor `{tensor}`: layer {layer} >= num_layers {num_layers}")
            }
            Error::ExpertExtent { tensor, extent, num_experts } => write!(
                f,
                "expert tensor `{tensor}`: expert-axis extent {extent} != num_experts {num_experts}"
            ),
            Error::InvalidModel(msg) => write!(f, "invalid model: {msg}"),
            Error::InvalidDegree(msg) => write!(f, "invalid parallel degree: {msg}"),
            Error::EpDoesNotDivideDp { ep, dp } => write!(f, "ep={ep} does not divide dp={dp}"),
            Error::PpExceedsLayers { pp, num_layers } => {
                write!(f, "pp={pp} exceeds the number of layers ({num_layers})")
            }
            Error::Divisibility { tensor, axis, extent, degree, dim } => write!(
                f,
                "{dim}={degree} does not divide extent {extent} of tensor `{tensor}` (axis {axis})"
            ),
            Error::RankOutOfRange { rank, world_size } => {
                write!(f, "rank {rank} out of range for world size {world_size}")
            }
            Error::VpsMismatch => f.write_str("region sets are bound to different parameter spaces"),
            Error::NoShardedOptimizer => f.write_str("no sharded optimizer: zero is disabled"),
            Error::ZeroMismatch => {
                f.write_str("transitions that toggle optimizer sharding are not supported")
            }
            Error::UnreachableState { device, region } => {
                write!(f, "unreachable state: no source holds {region} needed by device {device}")
            }
            Error::InvalidWorldMap(msg) => write!(f, "invalid world map: {msg}"),
            Error::InvalidTopology(msg) => write!(f, "invalid topology: {msg}"),
            Error::InfeasibleBudget { step, cost, budget } => write!(
                f,
                "infeasible budget: finer fragmentation required (step {step} needs {cost} bytes, budget {budget})"
            ),
            Error::InvalidBatchGeometry { global_batch, dp, micro_batch } => write!(
                f,
                "invalid batch geometry: global batch {global_batch} not divisible by dp {dp} x micro-batch {micro_batch}"
            ),
            Error::UnknownPolicy(p) => write!(f, "unknown precision policy `{p}`"),
            Error::Execution(msg) => write!(f, "execution failed: {msg}"),
            Error::OutOfMemory { device, stage, requested, cap } => write!(
                f,
                "OOM on rank {device} in stage {stage}: {requested} bytes exceeds cap {cap}"
            ),
        }
    }
}

impl core::error::Error for Error {}
