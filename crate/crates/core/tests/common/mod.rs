//! Brute-force element ownership, written directly from the layout rules and
//! independent of the region algebra.
#![allow(dead_code)]

use std::collections::BTreeSet;

use reshard_core::vps::{ModelSpec, ParallelConfig};

/// (tensor index, multi-index, layer) of every element in flat order.
pub fn elements(model: &ModelSpec) -> Vec<(usize, Vec<u64>)> {
    let mut out = Vec::new();
    for (t, spec) in model.tensors.iter().enumerate() {
        let n: u64 = spec.shape.iter().product();
        for lin in 0..n {
            let mut idx = vec![0; spec.shape.len()];
            let mut rem = lin;
            for a in (0..spec.shape.len()).rev() {
                idx[a] = rem % spec.shape[a];
                rem /= spec.shape[a];
            }
            out.push((t, idx));
        }
    }
    out
}

fn stage_of_layer(num_layers: u32, pp: u32, layer: u32) -> u32 {
    // walk the stages, remainder-first
    let mut start = 0;
    for s in 0..pp {
        let len = num_layers / pp + u32::from(s < num_layers % pp);
        if layer < start + len {
            return s;
        }
        start += len;
    }
    unreachable!()
}

/// (pp_rank, dp_rank, tp_rank) of a rank under the pp-dp-tp order.
pub fn coords(cfg: &ParallelConfig, rank: u32) -> (u32, u32, u32) {
    let tp = rank % cfg.tp;
    let dp = (rank / cfg.tp) % cfg.dp;
    let pp = rank / (cfg.tp * cfg.dp);
    (pp, dp, tp)
}

/// Whether `rank` holds the parameter element.
pub fn owns(model: &ModelSpec, cfg: &ParallelConfig, rank: u32, t: usize, idx: &[u64]) -> bool {
    let spec = &model.tensors[t];
    let (pp, dp, tp) = coords(cfg, rank);
    if stage_of_layer(model.num_layers, cfg.pp, spec.layer) != pp {
        return false;
    }
    if let Some(a) = spec.tp_shard_axis {
        let w = spec.shape[a] / u64::from(cfg.tp);
        if idx[a] / w != u64::from(tp) {
            return false;
        }
    }
    if let Some(a) = spec.expert_axis {
        let w = spec.shape[a] / u64::from(cfg.ep);
        if idx[a] / w != u64::from(dp % cfg.ep) {
            return false;
        }
    }
    true
}

/// Flat offsets of every parameter element held by `rank`.
pub fn param_set(model: &ModelSpec, cfg: &ParallelConfig, rank: u32) -> BTreeSet<u64> {
    elements(model)
        .iter()
        .enumerate()
        .filter(|(_, (t, idx))| owns(model, cfg, rank, *t, idx))
        .map(|(k, _)| k as u64)
        .collect()
}

/// Flat offsets of the ZeRO optimizer shard of `rank`: enumerate the
/// partition's elements in buffer order and cut by `ceil(L / n)`.
pub fn optimizer_set(model: &ModelSpec, cfg: &ParallelConfig, rank: u32) -> BTreeSet<u64> {
    let (_, dp, _) = coords(cfg, rank);
    let mut out = BTreeSet::new();
    for expert in [false, true] {
        let (groups, member) = if expert { (cfg.dp / cfg.ep, dp / cfg.ep) } else { (cfg.dp, dp) };
        // Buffer order: tensor by tensor in declaration order, row-major inside.
        let buffer: Vec<u64> = elements(model)
            .iter()
            .enumerate()
            .filter(|(_, (t, idx))| {
                model.tensors[*t].expert_axis.is_some() == expert && owns(model, cfg, rank, *t, idx)
            })
            .map(|(k, _)| k as u64)
            .collect();
        let len = buffer.len() as u64;
        let chunk = (len + u64::from(groups) - 1) / u64::from(groups);
        for (pos, k) in buffer.into_iter().enumerate() {
            if pos as u64 / chunk.max(1) == u64::from(member) {
                out.insert(k);
            }
        }
    }
    out
}

pub fn optimizer_or_replica(model: &ModelSpec, cfg: &ParallelConfig, rank: u32) -> BTreeSet<u64> {
    if cfg.zero {
        optimizer_set(model, cfg, rank)
    } else {
        param_set(model, cfg, rank)
    }
}

/// Every (dp, tp, pp, ep) factorization of `world` valid for a toy model with
/// `layers` layers, hidden size 8 and `experts` experts.
pub fn configs_for_world(world: u32, layers: u32, experts: u32, zero: bool) -> Vec<ParallelConfig> {
    let mut out = Vec::new();
    for tp in [1u32, 2, 4, 8] {
        for pp in 1..=layers {
            if world % (tp * pp) != 0 {
                continue;
            }
            let dp = world / (tp * pp);
            for ep in 1..=dp {
                if dp % ep == 0 && experts % ep == 0 && (ep == 1 || experts > 1) {
                    out.push(ParallelConfig::new(dp, tp, pp).with_ep(ep).with_zero(zero));
                }
            }
        }
    }
    out
}
