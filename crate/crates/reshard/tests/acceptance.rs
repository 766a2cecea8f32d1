//! Acceptance criteria 1 to 13. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use reshard::campaign::{sample_trials, CampaignConfig};
use reshard::commands::{self, ScaleArgs};
use reshard::dump::plan_dump;
use reshard::pipeline::{baseline, prepare, round_trip, run_from, Prepared};
use reshard::Scenario;
use reshard_core::elastic::{simulate_scale_event, ScaleMode, WorldTransition};
use reshard_core::engine::{memory_aware_chunk, xor_peer, CollectiveKind, StepCost};
use reshard_core::routing::{fragments, plan_dataset, BatchGeometry, StateKind, WorldMap, SCALAR_SLOTS};
use reshard_core::sim::{canon, ExecMode, ExecOptions, PairOrder, Payloads};
use reshard_core::vps::{
    build_vps, estimate_bytes_for_numel, ModelSpec, ParallelConfig, PrecisionPolicy, RankOrder, RegionSet, Span,
    TensorSpec, Vps,
};
use reshard_core::{Error, Topology};

const CAMPAIGN_TRIALS: usize = 100;
const ROUND_TRIPS: usize = 25;
const PROMOTION_CASES: usize = 50;

/// Element ownership enumerated straight from the layout rules.
mod brute {
    use super::*;

    /// (tensor index, multi-index) of every element in flat order.
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

    /// (pp, dp, tp) coordinates of a rank.
    pub fn coords(cfg: &ParallelConfig, r: u32) -> (u32, u32, u32) {
        match cfg.order {
            RankOrder::PpDpTp => (r / (cfg.tp * cfg.dp), (r / cfg.tp) % cfg.dp, r % cfg.tp),
            RankOrder::DpPpTp => ((r / cfg.tp) % cfg.pp, r / (cfg.tp * cfg.pp), r % cfg.tp),
            RankOrder::PpTpDp => (r / (cfg.dp * cfg.tp), r % cfg.dp, (r / cfg.dp) % cfg.tp),
        }
    }

    fn stage(num_layers: u32, pp: u32, layer: u32) -> u32 {
        let mut start = 0;
        for s in 0..pp {
            let len = num_layers / pp + u32::from(s < num_layers % pp);
            if layer < start + len {
                return s;
            }
            start += len;
        }
        unreachable!("layer {layer} beyond {num_layers}")
    }

    fn owns(model: &ModelSpec, cfg: &ParallelConfig, r: u32, t: usize, idx: &[u64]) -> bool {
        let spec = &model.tensors[t];
        let (pp, dp, tp) = coords(cfg, r);
        if stage(model.num_layers, cfg.pp, spec.layer) != pp {
            return false;
        }
        if let Some(a) = spec.tp_shard_axis {
            if idx[a] / (spec.shape[a] / u64::from(cfg.tp)) != u64::from(tp) {
                return false;
            }
        }
        if let Some(a) = spec.expert_axis {
            if idx[a] / (spec.shape[a] / u64::from(cfg.ep)) != u64::from(dp % cfg.ep) {
                return false;
            }
        }
        true
    }

    pub fn params(model: &ModelSpec, cfg: &ParallelConfig, r: u32) -> BTreeSet<u64> {
        elements(model)
            .iter()
            .enumerate()
            .filter(|(_, (t, idx))| owns(model, cfg, r, *t, idx))
            .map(|(k, _)| k as u64)
            .collect()
    }

    /// Optimizer elements: the parameter set itself without ZeRO; otherwise
    /// dense and expert buffers in declaration order, each cut into
    /// `ceil(len / group)` pieces over its data-parallel group.
    pub fn optimizer(model: &ModelSpec, cfg: &ParallelConfig, r: u32) -> BTreeSet<u64> {
        if !cfg.zero {
            return params(model, cfg, r);
        }
        let (_, dp, _) = coords(cfg, r);
        let mut out = BTreeSet::new();
        for expert in [false, true] {
            let (group, member) = if expert { (cfg.dp / cfg.ep, dp / cfg.ep) } else { (cfg.dp, dp) };
            let buffer: Vec<u64> = elements(model)
                .iter()
                .enumerate()
                .filter(|(_, (t, idx))| model.tensors[*t].expert_axis.is_some() == expert && owns(model, cfg, r, *t, idx))
                .map(|(k, _)| k as u64)
                .collect();
            let chunk = (buffer.len() as u64).div_ceil(u64::from(group)).max(1);
            out.extend(buffer.iter().enumerate().filter(|(i, _)| *i as u64 / chunk == u64::from(member)).map(|(_, k)| *k));
        }
        out
    }
}

fn set_of(vps: &Vps, r: &RegionSet) -> BTreeSet<u64> {
    fragments(r).iter().flat_map(|f| f.elements(vps).collect::<Vec<_>>()).collect()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(&fixture(name)).unwrap_or_else(|e| panic!("{e}"))
}

type Verdict = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

/// Per-device sets under `cfg`, indexed by device (empty off-world).
fn device_sets(
    model: &ModelSpec,
    cfg: &ParallelConfig,
    side: &[u32],
    n: u32,
    f: fn(&ModelSpec, &ParallelConfig, u32) -> BTreeSet<u64>,
) -> Vec<BTreeSet<u64>> {
    let mut v = vec![BTreeSet::new(); n as usize];
    for (rank, &dev) in side.iter().enumerate() {
        v[dev as usize] = f(model, cfg, rank as u32);
    }
    v
}

/// Criterion 1 for one trial: element-wise decomposition of every device's
/// parameter and optimizer state, and exactly one source per received
/// element.
fn decomposition_violations(sc: &Scenario, p: &Prepared) -> Vec<String> {
    let n = sc.world.device_count();
    let mut out = Vec::new();
    let kinds: [(&_, fn(&ModelSpec, &ParallelConfig, u32) -> BTreeSet<u64>); 2] =
        [(&p.plan.parameters, brute::params), (&p.plan.optimizer, brute::optimizer)];
    for (plan, f) in kinds {
        let src = device_sets(&sc.model, &sc.src, sc.world.src_world(), n, f);
        let dst = device_sets(&sc.model, &sc.dst, sc.world.dst_world(), n, f);
        for d in &plan.devices {
            let i = d.device as usize;
            let (send, recv, keep) = (set_of(&p.vps, &d.send_set), set_of(&p.vps, &d.recv_set), set_of(&p.vps, &d.retain));
            let union: BTreeSet<u64> = src[i].union(&dst[i]).copied().collect();
            let total = send.len() + recv.len() + keep.len();
            let joined: BTreeSet<u64> = send.iter().chain(&recv).chain(&keep).copied().collect();
            if total != joined.len() {
                out.push(format!("{} device {i}: categories overlap", plan.kind));
            }
            if joined != union {
                out.push(format!("{} device {i}: categories do not cover src and dst", plan.kind));
            }
            if keep != src[i].intersection(&dst[i]).copied().collect::<BTreeSet<_>>() {
                out.push(format!("{} device {i}: retain differs from src and dst overlap", plan.kind));
            }
            let mut inbound: Vec<u64> = d.recv.iter().flat_map(|t| t.fragment.elements(&p.vps).collect::<Vec<_>>()).collect();
            inbound.sort_unstable();
            if !inbound.iter().copied().eq(recv.iter().copied()) {
                out.push(format!("{} device {i}: received elements do not match the receive set exactly once", plan.kind));
            }
        }
    }
    out
}

/// Final payloads predicted from brute-force ownership under the
/// destination config.
fn brute_payloads(sc: &Scenario, seed: u64) -> Vec<Payloads> {
    let n = sc.world.device_count();
    let mut out: Vec<Payloads> = vec![Default::default(); n as usize];
    for (rank, &dev) in sc.world.dst_world().iter().enumerate() {
        let p = &mut out[dev as usize];
        let r = rank as u32;
        for k in brute::params(&sc.model, &sc.dst, r) {
            p[StateKind::Parameter.index()].insert(k, canon(seed, k, StateKind::Parameter));
        }
        for k in brute::optimizer(&sc.model, &sc.dst, r) {
            p[StateKind::Optimizer.index()].insert(k, canon(seed, k, StateKind::Optimizer));
        }
        for k in 0..SCALAR_SLOTS {
            p[StateKind::Scalar.index()].insert(k, canon(seed, k, StateKind::Scalar));
        }
    }
    out
}

fn count_diff(a: &[Payloads], b: &[Payloads]) -> usize {
    reshard::pipeline::count_mismatches(a, b)
}

/// Each device has at most one peer per step.
fn xor_matching_violations(p: &Prepared) -> usize {
    let mut bad = 0;
    for stage in &p.schedule.stages {
        let mut peers: BTreeMap<(u32, u32), BTreeSet<u32>> = BTreeMap::new();
        for b in &stage.buffers {
            peers.entry((b.step, b.src)).or_default().insert(b.dst);
            peers.entry((b.step, b.dst)).or_default().insert(b.src);
            if b.src ^ b.dst != b.step {
                bad += 1;
            }
        }
        bad += peers.values().filter(|s| s.len() > 1).count();
    }
    bad
}

#[derive(Default)]
struct CampaignFindings {
    trials: usize,
    decomposition: Vec<String>,
    mismatched_elements: usize,
    failures: Vec<String>,
    deadlocks: usize,
    matching: usize,
    over_budget: usize,
    tight_trials: usize,
    promotion: Vec<String>,
    promotion_cases: usize,
    kinds_seen: BTreeSet<String>,
    round_trip_diff: usize,
    round_trip_errors: Vec<String>,
    round_trips: usize,
}

fn run_campaign() -> CampaignFindings {
    let cfg = CampaignConfig { trials: CAMPAIGN_TRIALS, seed: 2024, ..CampaignConfig::default() };
    let trials = sample_trials(&cfg);
    let mut f = CampaignFindings { trials: trials.len(), ..Default::default() };
    for (i, sc) in trials.iter().enumerate() {
        let p = match prepare(sc, None) {
            Ok(p) => p,
            Err(e) => {
                f.failures.push(format!("{}: {e}", sc.name));
                continue;
            }
        };
        f.decomposition.extend(decomposition_violations(sc, &p).into_iter().map(|v| format!("{}: {v}", sc.name)));
        f.matching += xor_matching_violations(&p);
        let budget = p.schedule.budget;
        f.tight_trials += usize::from(budget != u64::MAX);
        let expected = brute_payloads(sc, sc.seed);
        let base = baseline(sc, &p, sc.seed).expect("load");
        f.mismatched_elements += count_diff(&base.oracle, &expected);
        for mode in ExecMode::ALL {
            match run_from(sc, &p, &base, mode, ExecOptions::default()) {
                Ok(out) => {
                    f.deadlocks += usize::from(out.report.deadlock);
                    f.over_budget += usize::from(out.report.max_peak() > budget);
                    f.mismatched_elements += out.violations.len() + out.oracle_mismatches;
                    f.mismatched_elements += count_diff(&out.cluster.payloads(), &expected);
                }
                Err(e) => f.failures.push(format!("{} {mode}: {e}", sc.name)),
            }
        }
        if i < PROMOTION_CASES {
            f.promotion_cases += 1;
            if let Some(e) = promotion_mismatch(&p) {
                f.promotion.push(format!("{}: {e}", sc.name));
            }
            f.kinds_seen.extend(p.schedule.collectives.iter().map(|c| c.kind.to_string()));
        }
        if i < ROUND_TRIPS {
            f.round_trips += 1;
            // the reverse direction has its own peak, so no shared budget
            match round_trip(sc, sc.seed, Some(u64::MAX)) {
                Ok(d) => f.round_trip_diff += d,
                Err(e) => f.round_trip_errors.push(format!("{} round trip: {e}", sc.name)),
            }
        }
    }
    f
}

/// Decomposing every collective and adding the point-to-point residue must
/// give back the plan's transfers.
fn promotion_mismatch(p: &Prepared) -> Option<String> {
    let plan = p.plan.transfers(&p.vps);
    let flat = p.schedule.flatten(&p.vps);
    if plan != flat {
        return Some(format!("{} planned transfers, {} after decomposition", plan.len(), flat.len()));
    }
    for c in &p.schedule.collectives {
        let d = c.decompose();
        if d.iter().map(|t| t.bytes).sum::<u64>() != c.bytes {
            return Some(format!("{} bytes not preserved", c.kind));
        }
    }
    None
}

fn criterion_1(f: &CampaignFindings) -> Verdict {
    check(f.failures.is_empty(), || f.failures[0].clone())?;
    check(f.decomposition.is_empty(), || format!("{} violations, first: {}", f.decomposition.len(), f.decomposition[0]))?;
    Ok(format!("{} random pairs, 0 violations (params and optimizer, element-wise)", f.trials))
}

fn criterion_2(f: &CampaignFindings) -> Verdict {
    check(f.failures.is_empty(), || f.failures[0].clone())?;
    check(f.mismatched_elements == 0, || format!("{} mismatched elements", f.mismatched_elements))?;
    Ok(format!("{} pairs x 3 modes, 0 mismatched elements against canon and oracle", f.trials))
}

fn criterion_3(f: &CampaignFindings) -> Verdict {
    check(f.round_trips >= ROUND_TRIPS, || format!("only {} round trips", f.round_trips))?;
    check(f.round_trip_errors.is_empty(), || f.round_trip_errors[0].clone())?;
    check(f.round_trip_diff == 0, || format!("{} elements differ after the round trip", f.round_trip_diff))?;
    Ok(format!("{} round trips restore the initial state exactly", f.round_trips))
}

fn criterion_4() -> Verdict {
    let sc = load("four_device.toml");
    let p = prepare(&sc, None).map_err(|e| e.to_string())?;
    let d = p.plan.parameters.devices.iter().find(|d| d.device == 3).ok_or("no device 3")?;
    check(!d.send.is_empty() && !d.recv.is_empty() && !d.retain.is_empty(), || {
        format!("device 3: send {} recv {} retain empty {}", d.send.len(), d.recv.len(), d.retain.is_empty())
    })?;
    let golden = std::fs::read_to_string(fixture("four_device.plan")).map_err(|e| e.to_string())?;
    check(plan_dump(&p.vps, &p.plan) == golden, || "dump differs from golden".into())?;
    Ok(format!(
        "device 3 sends {}, retains, receives {} fragments; dump matches golden ({} lines)",
        d.send.len(),
        d.recv.len(),
        golden.lines().count()
    ))
}

fn criterion_5(f: &CampaignFindings) -> Verdict {
    for n in [2u32, 3, 4, 5, 8, 16] {
        let bound = n.next_power_of_two();
        for s in 1..bound {
            let mut seen = BTreeSet::new();
            for i in 0..n {
                if let Some(j) = xor_peer(i, s, n) {
                    check(xor_peer(j, s, n) == Some(i), || format!("N={n} s={s}: peer of peer of {i} is not {i}"))?;
                    seen.insert(i);
                }
            }
            // every active rank sits in exactly one pair
            check(seen.len() % 2 == 0, || format!("N={n} s={s}: unmatched rank"))?;
        }
    }
    check(f.matching == 0, || format!("{} devices with more than one peer in a step", f.matching))?;
    check(f.deadlocks == 0, || format!("{} campaign executions deadlocked", f.deadlocks))?;
    let sc = load("four_device.toml");
    let p = prepare(&sc, None).map_err(|e| e.to_string())?;
    let base = baseline(&sc, &p, sc.seed).map_err(|e| e.to_string())?;
    let bad = run_from(&sc, &p, &base, ExecMode::BufferSync, ExecOptions { order: PairOrder::SendFirst })
        .map_err(|e| e.to_string())?;
    check(bad.report.deadlock && bad.report.witness.len() >= 2, || "send-first fixture was not flagged".into())?;
    Ok(format!(
        "involution and matching for N in 2,3,4,5,8,16; {} executions deadlock-free; send-first fixture deadlocks, witness {:?}",
        3 * f.trials,
        bad.report.witness
    ))
}

fn criterion_6(f: &CampaignFindings) -> Verdict {
    check(f.over_budget == 0, || format!("{} executions exceeded the budget", f.over_budget))?;
    let costs = [5, 4, 3].iter().enumerate().map(|(i, &c)| StepCost { step: i as u32 + 1, cost: c }).collect::<Vec<_>>();
    let stages = memory_aware_chunk(&costs, &[10, 8, 12]).map_err(|e| e.to_string())?;
    let steps: Vec<Vec<u32>> = stages.iter().map(|s| s.iter().map(|c| c.step).collect()).collect();
    check(steps == vec![vec![1], vec![2, 3]], || format!("stages {steps:?}"))?;
    let e = memory_aware_chunk(&costs, &[4]).err().ok_or("budget 4 accepted")?;
    check(matches!(e, Error::InfeasibleBudget { step: 1, cost: 5, budget: 4 }), || format!("{e:?}"))?;
    check(e.to_string().starts_with("infeasible budget: finer fragmentation required"), || e.to_string())?;
    let sc = load("four_device.toml");
    let full = prepare(&sc, None).map_err(|e| e.to_string())?;
    let max_step = full.schedule.stages.iter().flat_map(|s| &s.steps).map(|c| c.cost).max().unwrap_or(0);
    let e = prepare(&sc, Some(max_step - 1)).err().ok_or("sub-step budget accepted")?;
    check(e.to_string().contains("infeasible budget"), || e.to_string())?;
    Ok(format!(
        "peaks within budget in all {} executions ({} trials budget-bound); [5,4,3] under [10,8,12] -> [[1],[2,3]]; budget below max step rejected",
        3 * f.trials,
        f.tight_trials
    ))
}

fn forced_promotions() -> Result<BTreeSet<String>, String> {
    let model = ModelSpec::new(vec![TensorSpec::dense("w", &[8, 8], 0).tp_sharded(0)], 1, 1);
    let cases = [
        (ParallelConfig::new(1, 1, 1), ParallelConfig::new(4, 1, 1), CollectiveKind::Broadcast),
        (ParallelConfig::new(1, 1, 1), ParallelConfig::new(1, 4, 1), CollectiveKind::Scatter),
        (ParallelConfig::new(1, 4, 1), ParallelConfig::new(1, 1, 1), CollectiveKind::Gather),
    ];
    let mut seen = BTreeSet::new();
    for (src, dst, kind) in cases {
        let world = WorldMap::resize(src.world_size(), dst.world_size());
        let sc = Scenario {
            name: format!("forced-{kind}"),
            model: model.clone(),
            topology: Topology::new(1, 4),
            src,
            dst,
            world,
            budget: vec![u64::MAX],
            mem_cap: None,
            seed: 5,
            data: None,
            mode: ExecMode::BufferAsync,
            options: Default::default(),
            collectives: true,
        };
        let p = prepare(&sc, None).map_err(|e| e.to_string())?;
        check(p.schedule.collectives.iter().any(|c| c.kind == kind), || format!("{kind} not emitted"))?;
        if let Some(e) = promotion_mismatch(&p) {
            return Err(format!("{kind}: {e}"));
        }
        let base = baseline(&sc, &p, sc.seed).map_err(|e| e.to_string())?;
        let out = run_from(&sc, &p, &base, ExecMode::BufferAsync, ExecOptions::default()).map_err(|e| e.to_string())?;
        check(out.passed(p.schedule.budget), || format!("{kind}: execution not exact"))?;
        seen.insert(kind.to_string());
    }
    Ok(seen)
}

fn criterion_7(f: &CampaignFindings) -> Verdict {
    check(f.promotion.is_empty(), || f.promotion[0].clone())?;
    let forced = forced_promotions()?;
    Ok(format!(
        "{} random cases plus forced {}; random cases emitted {:?}",
        f.promotion_cases,
        forced.into_iter().collect::<Vec<_>>().join("/"),
        f.kinds_seen
    ))
}

fn criterion_8() -> Verdict {
    let model = ModelSpec::new(
        vec![TensorSpec::dense("A", &[30], 0), TensorSpec::dense("B", &[45], 0), TensorSpec::dense("C", &[25], 0)],
        1,
        1,
    );
    let vps = build_vps(model).map_err(|e| e.to_string())?;
    let cfg = ParallelConfig::new(2, 1, 1).with_zero(true);
    let spans = |r| vps.project_optimizer(&cfg, r).map(|s| s.flat().spans().to_vec()).map_err(|e| e.to_string());
    // A = [0,30), B = [30,75), C = [75,100)
    let (a, b, c) = (Span::new(0, 30), Span::new(30, 75), Span::new(75, 100));
    let expect0: BTreeSet<u64> = (a.lo..a.hi).chain(b.lo..b.lo + 20).collect();
    let expect1: BTreeSet<u64> = (b.lo + 20..b.hi).chain(c.lo..c.hi).collect();
    let got = |s: Vec<Span>| s.iter().flat_map(|s| s.lo..s.hi).collect::<BTreeSet<u64>>();
    check(got(spans(0)?) == expect0, || "rank 0 is not A + B[0:20)".into())?;
    check(got(spans(1)?) == expect1, || "rank 1 is not B[20:45) + C".into())?;

    let model = ModelSpec::toy_transformer(4, 8, 4);
    let vps = build_vps(model.clone()).map_err(|e| e.to_string())?;
    let mut groups = 0;
    for dp in [2u32, 3, 4] {
        for (tp, pp, ep) in [(1, 1, 1), (2, 2, 1), (1, 2, if dp % 2 == 0 { 2 } else { 1 })] {
            let cfg = ParallelConfig::new(dp, tp, pp).with_ep(ep).with_zero(true);
            if cfg.validate_for(&model).is_err() {
                continue;
            }
            // one dp group per (pp, tp) position; expert state splits over
            // edp groups inside it
            let mut by_pos: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
            for r in 0..cfg.world_size() {
                let (pp_r, _, tp_r) = brute::coords(&cfg, r);
                by_pos.entry((pp_r, tp_r)).or_default().push(r);
            }
            for ranks in by_pos.values() {
                groups += 1;
                let mut seen = BTreeSet::new();
                let mut span = BTreeSet::new();
                for &r in ranks {
                    let shard = set_of(&vps, &vps.project_optimizer(&cfg, r).map_err(|e| e.to_string())?);
                    for &k in &shard {
                        // expert elements are replicated once per ep slice
                        let expert = vps.locate(k).map(|(t, _)| model.tensors[t].expert_axis.is_some()).unwrap_or(false);
                        if !expert && !seen.insert(k) {
                            return Err(format!("{cfg}: element {k} in two dense shards"));
                        }
                    }
                    span.extend(brute::params(&model, &cfg, r));
                    seen.extend(shard);
                }
                check(seen == span, || format!("{cfg}: shards do not cover the position's span"))?;
                // expert shards per edp group are disjoint
                let mut edp: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
                for &r in ranks {
                    edp.entry(brute::coords(&cfg, r).1 % cfg.ep).or_default().push(r);
                }
                for members in edp.values() {
                    let mut taken = BTreeSet::new();
                    for &r in members {
                        for k in set_of(&vps, &vps.project_optimizer(&cfg, r).map_err(|e| e.to_string())?) {
                            let expert = vps.locate(k).map(|(t, _)| model.tensors[t].expert_axis.is_some()).unwrap_or(false);
                            if expert && !taken.insert(k) {
                                return Err(format!("{cfg}: expert element {k} in two shards"));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(format!("A/B/C fixture maps back to A+B[0:20) and B[20:45)+C; {groups} dp groups over dp 2,3,4 partition exactly"))
}

fn criterion_9() -> Verdict {
    let sc = load("pp8_dp4.toml");
    let mut parts = Vec::new();
    for s in [sc.clone(), sc.reversed()] {
        let ([naive, sync, asynch], ok) = commands::mode_times(&s, s.seed, None).map_err(|e| e.to_string())?;
        check(ok, || format!("{} -> {}: execution not exact", s.src, s.dst))?;
        check(asynch < sync && sync < naive, || format!("{} -> {}: {asynch} {sync} {naive}", s.src, s.dst))?;
        parts.push(format!("buffer {:.2}x, async {:.2}x", naive / sync, sync / asynch));
    }
    Ok(format!("async < sync < naive both ways; forward {}; reverse {}", parts[0], parts[1]))
}

fn criterion_10() -> Verdict {
    let mut shown = Vec::new();
    for (exposed, overlapped, expect) in [(1.91, 40.98, 95.6), (3.05, 40.32, 93.0)] {
        let t = WorldTransition {
            old_nodes: vec![0, 1],
            new_nodes: vec![0, 1, 2],
            init_cost: overlapped,
            train_step_cost: overlapped / 20.0,
            switch_cost: exposed,
        };
        let tl = simulate_scale_event(&t, ScaleMode::Overlapped);
        let ratio = tl.overlap_ratio.ok_or("no ratio")? * 100.0;
        check((ratio - expect).abs() <= 0.1, || format!("{ratio:.3}% vs {expect}%"))?;
        let out = commands::scale(&ScaleArgs {
            scenario: None,
            old_nodes: 2,
            new_nodes: 3,
            init_cost: Some(overlapped),
            step_cost: overlapped / 20.0,
            switch_cost: Some(exposed),
            modes: vec![ScaleMode::Overlapped],
        })
        .map_err(|e| e.to_string())?;
        let printed: f64 = out
            .stdout
            .lines()
            .find_map(|l| l.strip_prefix("overlap_ratio: ")?.strip_suffix('%')?.parse().ok())
            .ok_or("report lacks an overlap ratio")?;
        check((printed - expect).abs() <= 0.1 + 1e-9, || format!("printed {printed}% vs {expect}%"))?;
        shown.push(format!("{ratio:.2}% (printed {printed:.1}%)"));
    }
    Ok(format!("ratios {} (targets 95.6% / 93.0%, tolerance 0.1 pp)", shown.join(" / ")))
}

fn criterion_11() -> Verdict {
    let bytes = estimate_bytes_for_numel(70_000_000_000, PrecisionPolicy::MixedBf16Fp32) as f64;
    let rel = (bytes - 1.26e12).abs() / 1.26e12;
    check(rel <= 0.01, || format!("{bytes:e} bytes"))?;
    Ok(format!("{bytes:.3e} bytes (relative error {rel:.1e})"))
}

fn criterion_12() -> Verdict {
    let batch = BatchGeometry { global_batch: 64, micro_batch: 2 };
    for (a, b) in [(4, 8), (8, 4)] {
        let plan = plan_dataset(&ParallelConfig::new(a, 1, 1), &ParallelConfig::new(b, 1, 1), 1000, batch)
            .map_err(|e| e.to_string())?;
        let first: Vec<u64> = (0..plan.dp).flat_map(|r| plan.assignment(0, r)).collect();
        let unique: BTreeSet<u64> = first.iter().copied().collect();
        check(unique.len() == first.len(), || format!("dp {a}->{b}: duplicate samples"))?;
        check(first == (1000..1064).collect::<Vec<_>>(), || format!("dp {a}->{b}: not [1000, 1064)"))?;
    }
    let sc = load("dataset.toml");
    let out = commands::verify(&sc, None, None).map_err(|e| e.to_string())?;
    check(out.ok && out.stdout.contains("dataset: ok"), || out.stdout.clone())?;
    Ok("dp 4->8 and 8->4 resume at 1000 and cover [1000, 1064) once".into())
}

fn criterion_13() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_reshard");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let four_device = fixture("four_device.toml");
    let pp8_dp4 = fixture("pp8_dp4.toml");
    let run = |args: &[&str], dump: Option<&Path>| -> Result<(Vec<u8>, Vec<u8>), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        check(out.status.success(), || format!("{args:?} exited {:?}", out.status.code()))?;
        let file = dump.map(std::fs::read).transpose().map_err(|e| e.to_string())?.unwrap_or_default();
        Ok((out.stdout, file))
    };
    let plan_file = dir.path().join("plan.txt");
    let sched_file = dir.path().join("schedule.txt");
    let (p, s, f, t) = (four_device.to_str().unwrap(), plan_file.to_str().unwrap(), sched_file.to_str().unwrap(), pp8_dp4.to_str().unwrap());
    let commands: Vec<(Vec<&str>, Option<&Path>)> = vec![
        (vec!["plan", p], None),
        (vec!["plan", p, "--dump", s], Some(&plan_file)),
        (vec!["run", p, "--mode", "all", "--trace", "--dump", f], Some(&sched_file)),
        (vec!["verify", p], None),
        (vec!["ablate", t], None),
        (vec!["scale", "--scenario", p, "--old-nodes", "1", "--new-nodes", "2"], None),
        (vec!["campaign", "--trials", "5", "--seed", "9"], None),
    ];
    for (args, dump) in &commands {
        let first = run(args, *dump)?;
        let second = run(args, *dump)?;
        check(first == second, || format!("{args:?} differs between runs"))?;
    }
    Ok(format!("{} commands byte-identical across two runs, dumps included", commands.len()))
}

fn main() {
    let started = std::time::Instant::now();
    let findings = run_campaign();
    let results: Vec<(&str, Verdict)> = vec![
        ("decomposition identity", criterion_1(&findings)),
        ("exactness and oracle equivalence", criterion_2(&findings)),
        ("round trip", criterion_3(&findings)),
        ("four-device golden plan", criterion_4()),
        ("xor schedule and deadlock freedom", criterion_5(&findings)),
        ("memory bound and chunking", criterion_6(&findings)),
        ("promotion soundness", criterion_7(&findings)),
        ("optimizer inversion", criterion_8()),
        ("ablation ordering", criterion_9()),
        ("overlap accounting", criterion_10()),
        ("state-size estimate", criterion_11()),
        ("dataset continuity", criterion_12()),
        ("determinism", criterion_13()),
    ];
    let mut failed = 0;
    for (i, (name, verdict)) in results.iter().enumerate() {
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed in {:.1}s", results.len() - failed, results.len(), started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
