use core::fmt;
use core::ops::Range;

use super::ModelSpec;
use crate::{Error, Result};

/// Order in which the pp, dp and tp coordinates are folded into a flat rank,
/// outermost first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum RankOrder {
    /// `rank = (pp_rank * dp + dp_rank) * tp + tp_rank`.
    #[default]
    PpDpTp,
    /// `rank = (dp_rank * pp + pp_rank) * tp + tp_rank`.
    DpPpTp,
    /// `rank = (pp_rank * tp + tp_rank) * dp + dp_rank`.
    PpTpDp,
}

impl RankOrder {
    pub fn name(self) -> &'static str {
        match self {
            RankOrder::PpDpTp => "pp-dp-tp",
            RankOrder::DpPpTp => "dp-pp-tp",
            RankOrder::PpTpDp => "pp-tp-dp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pp-dp-tp" => Some(RankOrder::PpDpTp),
            "dp-pp-tp" => Some(RankOrder::DpPpTp),
            "pp-tp-dp" => Some(RankOrder::PpTpDp),
            _ => None,
        }
    }
}

/// Position of a rank along the parallel dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RankCoord {
    pub pp_rank: u32,
    pub dp_rank: u32,
    pub tp_rank: u32,
}

/// The tuple (dp, tp, pp, ep, zero) plus a rank-ordering convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParallelConfig {
    pub dp: u32,
    pub tp: u32,
    pub pp: u32,
    /// Expert-parallel degree, drawn from within the dp dimension.
    pub ep: u32,
    pub zero: bool,
    pub order: RankOrder,
}

impl ParallelConfig {
    pub fn new(dp: u32, tp: u32, pp: u32) -> Self {
        Self { dp, tp, pp, ep: 1, zero: false, order: RankOrder::default() }
    }

    pub fn with_ep(mut self, ep: u32) -> Self {
        self.ep = ep;
        self
    }

    pub fn with_zero(mut self, zero: bool) -> Self {
        self.zero = zero;
        self
    }

    pub fn with_order(mut self, order: RankOrder) -> Self {
        self.order = order;
        self
    }

    pub fn world_size(&self) -> u32 {
        self.dp * self.tp * self.pp
    }

    /// Size of the expert data-parallel group (ranks replicating one expert
    /// slice).
    pub fn edp(&self) -> u32 {
        self.dp / self.ep
    }

    /// Checks the degrees in isolation.
    pub fn validate(&self) -> Result<()> {
        if self.dp == 0 || self.tp == 0 || self.pp == 0 || self.ep == 0 {
            return Err(Error::InvalidDegree("all degrees must be positive"));
        }
        if self.dp % self.ep != 0 {
            return Err(Error::EpDoesNotDivideDp { ep: self.ep, dp: self.dp });
        }
        Ok(())
    }

    /// Checks the degrees against a model: divisibility of every sharded
    /// extent and pipeline depth.
    pub fn validate_for(&self, model: &ModelSpec) -> Result<()> {
        self.validate()?;
        if self.pp > model.num_layers {
            return Err(Error::PpExceedsLayers { pp: self.pp, num_layers: model.num_layers });
        }
        if model.num_experts % self.ep != 0 {
            return Err(Error::Divisibility {
                tensor: alloc::string::String::from("<num_experts>"),
                axis: 0,
                extent: u64::from(model.num_experts),
                degree: self.ep,
                dim: "ep",
            });
        }
        for t in &model.tensors {
            if let Some(axis) = t.tp_shard_axis {
                if t.shape[axis] % u64::from(self.tp) != 0 {
                    return Err(Error::Divisibility {
                        tensor: t.id.clone(),
                        axis,
                        extent: t.shape[axis],
                        degree: self.tp,
                        dim: "tp",
                    });
                }
            }
            if let Some(axis) = t.expert_axis {
                if t.shape[axis] % u64::from(self.ep) != 0 {
                    return Err(Error::Divisibility {
                        tensor: t.id.clone(),
                        axis,
                        extent: t.shape[axis],
                        degree: self.ep,
                        dim: "ep",
                    });
                }
            }
        }
        Ok(())
    }

    fn dims(&self) -> [(u32, Dim); 3] {
        match self.order {
            RankOrder::PpDpTp => [(self.pp, Dim::Pp), (self.dp, Dim::Dp), (self.tp, Dim::Tp)],
            RankOrder::DpPpTp => [(self.dp, Dim::Dp), (self.pp, Dim::Pp), (self.tp, Dim::Tp)],
            RankOrder::PpTpDp => [(self.pp, Dim::Pp), (self.tp, Dim::Tp), (self.dp, Dim::Dp)],
        }
    }

    pub fn coord(&self, rank: u32) -> Result<RankCoord> {
        if rank >= self.world_size() {
            return Err(Error::RankOutOfRange { rank, world_size: self.world_size() });
        }
        let mut c = RankCoord { pp_rank: 0, dp_rank: 0, tp_rank: 0 };
        let mut rest = rank;
        for (size, dim) in self.dims().into_iter().rev() {
            let v = rest % size;
            rest /= size;
            match dim {
                Dim::Pp => c.pp_rank = v,
                Dim::Dp => c.dp_rank = v,
                Dim::Tp => c.tp_rank = v,
            }
        }
        Ok(c)
    }

    pub fn rank_of(&self, c: RankCoord) -> u32 {
        self.dims().into_iter().fold(0, |acc, (size, dim)| {
            let v = match dim {
                Dim::Pp => c.pp_rank,
                Dim::Dp => c.dp_rank,
                Dim::Tp => c.tp_rank,
            };
            acc * size + v
        })
    }

    pub fn ep_rank(&self, c: RankCoord) -> u32 {
        c.dp_rank % self.ep
    }

    pub fn edp_rank(&self, c: RankCoord) -> u32 {
        c.dp_rank / self.ep
    }

    /// Contiguous layer range of a pipeline stage; the first
    /// `num_layers % pp` stages take one extra layer.
    pub fn stage_layers(&self, num_layers: u32, pp_rank: u32) -> Range<u32> {
        let base = num_layers / self.pp;
        let rem = num_layers % self.pp;
        let start = pp_rank * base + pp_rank.min(rem);
        let len = base + u32::from(pp_rank < rem);
        start..start + len
    }
}

#[derive(Clone, Copy)]
enum Dim {
    Pp,
    Dp,
    Tp,
}

impl fmt::Display for ParallelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(dp={}, tp={}, pp={}, ep={}, zero={})",
            self.dp, self.tp, self.pp, self.ep, self.zero
        )
    }
}
