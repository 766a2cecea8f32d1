use alloc::string::ToString;

use super::ModelSpec;
use crate::{Error, Result};

/// Precision policy of the training state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PrecisionPolicy {
    /// bf16 parameters with fp32 gradients, master weights and Adam moments.
    #[default]
    MixedBf16Fp32,
    /// fp32 parameters, gradients and Adam moments.
    Fp32,
}

impl PrecisionPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bf16-fp32-mixed" => Ok(Self::MixedBf16Fp32),
            "fp32" => Ok(Self::Fp32),
            other => Err(Error::UnknownPolicy(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MixedBf16Fp32 => "bf16-fp32-mixed",
            Self::Fp32 => "fp32",
        }
    }

    /// Parameter + gradient + optimizer bytes per element.
    pub fn bytes_per_element(self) -> u64 {
        self.param_bytes() + self.gradient_bytes() + self.optimizer_bytes()
    }

    pub fn param_bytes(self) -> u64 {
        match self {
            Self::MixedBf16Fp32 => 2,
            Self::Fp32 => 4,
        }
    }

    pub fn gradient_bytes(self) -> u64 {
        4
    }

    /// Optimizer-state width: master copy (mixed only) plus two moments.
    pub fn optimizer_bytes(self) -> u64 {
        match self {
            Self::MixedBf16Fp32 => 12,
            Self::Fp32 => 8,
        }
    }
}

/// Bytes of parameter, gradient and optimizer state for one replica.
pub fn estimate_state_bytes(model: &ModelSpec, policy: PrecisionPolicy) -> u64 {
    estimate_bytes_for_numel(model.total_numel(), policy)
}

pub fn estimate_bytes_for_numel(numel: u64, policy: PrecisionPolicy) -> u64 {
    numel * policy.bytes_per_element()
}
