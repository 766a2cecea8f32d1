use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Declarative description of one logical tensor.
///
/// `id` and `layer` locate the tensor in the model; `tp_shard_axis` and
/// `expert_axis` say how parallel configurations cut it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub id: String,
    pub shape: Vec<u64>,
    pub layer: u32,
    pub tp_shard_axis: Option<usize>,
    /// Present iff the tensor is an expert tensor.
    pub expert_axis: Option<usize>,
    pub dtype_bytes: u32,
}

impl TensorSpec {
    pub fn dense(id: impl Into<String>, shape: &[u64], layer: u32) -> Self {
        Self {
            id: id.into(),
            shape: shape.to_vec(),
            layer,
            tp_shard_axis: None,
            expert_axis: None,
            dtype_bytes: 2,
        }
    }

    pub fn tp_sharded(mut self, axis: usize) -> Self {
        self.tp_shard_axis = Some(axis);
        self
    }

    pub fn expert(mut self, axis: usize) -> Self {
        self.expert_axis = Some(axis);
        self
    }

    pub fn with_dtype_bytes(mut self, bytes: u32) -> Self {
        self.dtype_bytes = bytes;
        self
    }

    pub fn is_expert(&self) -> bool {
        self.expert_axis.is_some()
    }

    pub fn numel(&self) -> u64 {
        self.shape.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.dtype_bytes == 0 {
            return Err(Error::InvalidModel("dtype_bytes must be positive"));
        }
        for (axis, &e) in self.shape.iter().enumerate() {
            if e == 0 {
                return Err(Error::ZeroExtent { tensor: self.id.clone(), axis });
            }
        }
        let rank = self.shape.len();
        for axis in [self.tp_shard_axis, self.expert_axis].into_iter().flatten() {
            if axis >= rank {
                return Err(Error::InvalidAxis { tensor: self.id.clone(), axis, rank });
            }
        }
        if self.tp_shard_axis.is_some() && self.tp_shard_axis == self.expert_axis {
            return Err(Error::ExpertAxisConflict(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub tensors: Vec<TensorSpec>,
    pub num_layers: u32,
    /// 1 for dense models.
    pub num_experts: u32,
}

impl ModelSpec {
    pub fn new(tensors: Vec<TensorSpec>, num_layers: u32, num_experts: u32) -> Self {
        Self { tensors, num_layers, num_experts }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidModel("num_layers must be positive"));
        }
        if self.num_experts == 0 {
            return Err(Error::InvalidModel("num_experts must be positive"));
        }
        let mut seen = BTreeSet::new();
        for t in &self.tensors {
            if !seen.insert(t.id.as_str()) {
                return Err(Error::DuplicateTensor(t.id.clone()));
            }
            t.validate()?;
            if t.layer >= self.num_layers {
                return Err(Error::LayerOutOfRange {
                    tensor: t.id.clone(),
                    layer: t.layer,
                    num_layers: self.num_layers,
                });
            }
            if let Some(axis) = t.expert_axis {
                if t.shape[axis] != u64::from(self.num_experts) {
                    return Err(Error::ExpertExtent {
                        tensor: t.id.clone(),
                        extent: t.shape[axis],
                        num_experts: u64::from(self.num_experts),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn total_numel(&self) -> u64 {
        self.tensors.iter().map(TensorSpec::numel).sum()
    }

    /// A small transformer: an embedding on layer 0, then per layer a fused
    /// QKV projection, attention output, a two-matrix MLP and a norm vector.
    /// With `num_experts > 1` each layer also carries a stacked expert weight.
    ///
    /// Every sharded extent is a multiple of `hidden`, so any `tp` dividing
    /// `hidden` is valid.
    pub fn toy_transformer(num_layers: u32, hidden: u64, num_experts: u32) -> Self {
        let ffn = 2 * hidden;
        let mut tensors = vec![TensorSpec::dense("embed", &[4 * hidden, hidden], 0).tp_sharded(0)];
        for l in 0..num_layers {
            let name = |s: &str| format!("layers.{l:02}.{s}");
            tensors.push(TensorSpec::dense(name("attn.qkv"), &[3 * hidden, hidden], l).tp_sharded(0));
            tensors.push(TensorSpec::dense(name("attn.proj"), &[hidden, hidden], l).tp_sharded(1));
            tensors.push(TensorSpec::dense(name("mlp.fc1"), &[ffn, hidden], l).tp_sharded(0));
            tensors.push(TensorSpec::dense(name("mlp.fc2"), &[hidden, ffn], l).tp_sharded(1));
            tensors.push(TensorSpec::dense(name("norm"), &[hidden], l));
            if num_experts > 1 {
                tensors.push(
                    TensorSpec::dense(name("moe.experts"), &[u64::from(num_experts), ffn, hidden], l)
                        .tp_sharded(1)
                        .expert(0),
                );
            }
        }
        Self { tensors, num_layers, num_experts }
    }
}
