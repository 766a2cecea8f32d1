//! Randomized campaigns: sample (src, dst) transitions on a toy model, run
//! each through every mode and check exactness, oracle equivalence, the
//! memory bound and deadlock freedom.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reshard_core::routing::{validate_transition, StateKind, TransitionOptions, WorldMap};
use reshard_core::sim::{verify_state, ExecMode, ExecOptions};
use reshard_core::vps::{ModelSpec, ParallelConfig, RankOrder};
use reshard_core::Topology;

use crate::pipeline::{baseline, prepare, run_from, Failure, Prepared};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignConfig {
    pub trials: usize,
    pub seed: u64,
    pub max_world: u32,
    pub layers: u32,
    pub hidden: u64,
    pub experts: u32,
    /// Corrupt one element after each run and require the verifier to
    /// catch it.
    pub inject_fault: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self { trials: 100, seed: 0, max_world: 16, layers: 8, hidden: 8, experts: 4, inject_fault: false }
    }
}

/// Every valid config of `world` ranks for `model`, in the default rank
/// order.
pub fn valid_configs(model: &ModelSpec, world: u32, zero: bool) -> Vec<ParallelConfig> {
    let mut out = Vec::new();
    for tp in (1..=world).filter(|t| world % t == 0) {
        for pp in (1..=world / tp).filter(|p| (world / tp) % p == 0) {
            let dp = world / (tp * pp);
            for ep in (1..=dp).filter(|e| dp % e == 0) {
                let cfg = ParallelConfig::new(dp, tp, pp).with_ep(ep).with_zero(zero);
                if cfg.validate_for(model).is_ok() {
                    out.push(cfg);
                }
            }
        }
    }
    out
}

/// Draws one transition. Worlds may differ in size; the devices of each
/// side are a random subset of `0..max(src, dst)` so growth and shrink
/// happen at arbitrary positions.
pub fn sample_scenario(cfg: &CampaignConfig, index: usize, rng: &mut impl Rng) -> Scenario {
    let model = ModelSpec::toy_transformer(cfg.layers, cfg.hidden, cfg.experts);
    let zero = rng.random_bool(0.5);
    let orders = [RankOrder::PpDpTp, RankOrder::DpPpTp, RankOrder::PpTpDp];
    let pick = |rng: &mut dyn rand::RngCore| loop {
        let w = rng.random_range(1..=cfg.max_world);
        let options = valid_configs(&model, w, zero);
        if !options.is_empty() {
            let c = options[rng.random_range(0..options.len())];
            // non-default orders are rarer so the default stays well covered
            let order = if rng.random_bool(0.25) { orders[rng.random_range(0..orders.len())] } else { RankOrder::default() };
            return c.with_order(order);
        }
    };
    let src = pick(rng);
    let dst = pick(rng);
    let (ns, nd) = (src.world_size(), dst.world_size());
    let n = ns.max(nd);
    let world = if rng.random_bool(0.5) {
        WorldMap::resize(ns, nd)
    } else {
        let mut devices: Vec<u32> = (0..n).collect();
        devices.shuffle(rng);
        // both sides drawn from one permutation, so their union is 0..n
        let s = devices[..ns as usize].to_vec();
        let mut d = devices[(n - nd) as usize..].to_vec();
        d.shuffle(rng);
        WorldMap::explicit(s, d).expect("permutation slices form a valid map")
    };
    let per_node = [2, 4, 8][rng.random_range(0..3)];
    let topology = Topology::new(n.div_ceil(per_node), per_node);
    let mode = ExecMode::ALL[rng.random_range(0..3)];
    Scenario {
        name: format!("trial-{index}"),
        model,
        topology,
        src,
        dst,
        world,
        budget: vec![u64::MAX],
        mem_cap: None,
        seed: rng.random(),
        data: None,
        mode,
        options: TransitionOptions::default(),
        collectives: rng.random_bool(0.8),
    }
}

/// Smallest uniform budget the prepared schedule fits in: the largest step
/// or collective buffer.
pub fn tight_budget(p: &Prepared) -> u64 {
    let steps = p.schedule.stages.iter().flat_map(|s| &s.steps).map(|c| c.cost).max().unwrap_or(0);
    let coll = p.schedule.collectives.iter().map(|c| c.max_buffer_bytes()).max().unwrap_or(0);
    steps.max(coll).max(1)
}

/// The sampled trials of a campaign, each with its budget already applied.
pub fn sample_trials(cfg: &CampaignConfig) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.trials)
        .map(|i| {
            let mut sc = sample_scenario(cfg, i, &mut rng);
            // a third unlimited, a third at the tightest feasible budget, a
            // third in between
            let choice = rng.random_range(0..3);
            if choice > 0 {
                if let Ok(p) = prepare(&sc, None) {
                    let tight = tight_budget(&p);
                    sc.budget = vec![if choice == 1 { tight } else { tight + tight / 2 }];
                }
            }
            sc
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub name: String,
    pub description: String,
    pub transfers: usize,
    /// Failures found, one line each; empty on success.
    pub problems: Vec<String>,
    /// Whether an injected fault was caught, when one was injected.
    pub fault_detected: Option<bool>,
}

impl TrialResult {
    pub fn passed(&self) -> bool {
        self.problems.is_empty() && self.fault_detected != Some(false)
    }
}

/// Runs one trial through plan validation and every execution mode.
pub fn run_trial(sc: &Scenario, inject_fault: bool) -> TrialResult {
    let budget = sc.budget.iter().copied().min().unwrap_or(u64::MAX);
    let budget_text = if budget == u64::MAX { "unlimited".to_string() } else { budget.to_string() };
    let mut result = TrialResult {
        name: sc.name.clone(),
        description: format!(
            "{} -> {} devices={} budget={}",
            sc.src,
            sc.dst,
            sc.world.device_count(),
            budget_text
        ),
        transfers: 0,
        problems: Vec::new(),
        fault_detected: None,
    };
    let p = match prepare(sc, None) {
        Ok(p) => p,
        Err(e) => {
            result.problems.push(format!("prepare: {e}"));
            return result;
        }
    };
    result.transfers = p.plan.transfers(&p.vps).len();
    match validate_transition(&p.plan, &p.vps, &sc.dst) {
        Ok(r) => result.problems.extend(r.violations.iter().map(|v| format!("plan: {v}"))),
        Err(e) => result.problems.push(format!("plan: {e}")),
    }
    let base = match baseline(sc, &p, sc.seed) {
        Ok(b) => b,
        Err(e) => {
            result.problems.push(format!("load: {e}"));
            return result;
        }
    };
    for mode in ExecMode::ALL {
        let out = match run_from(sc, &p, &base, mode, ExecOptions::default()) {
            Ok(o) => o,
            Err(e) => {
                result.problems.push(format!("{mode}: {e}"));
                continue;
            }
        };
        if out.report.deadlock {
            result.problems.push(format!("{mode}: deadlock, witness {:?}", out.report.witness));
        }
        if let Some(v) = out.violations.first() {
            result.problems.push(format!("{mode}: {} violations, first {v}", out.violations.len()));
        }
        if out.oracle_mismatches > 0 {
            result.problems.push(format!("{mode}: {} elements differ from the oracle", out.oracle_mismatches));
        }
        if out.report.max_peak() > budget {
            result.problems.push(format!("{mode}: peak {} exceeds budget {budget}", out.report.max_peak()));
        }
        if inject_fault && mode == sc.mode {
            result.fault_detected = Some(inject_and_detect(sc, &p, out.cluster));
        }
    }
    result
}

/// Flips one stored parameter and checks that exactly that element is
/// reported.
fn inject_and_detect(sc: &Scenario, p: &Prepared, mut cluster: reshard_core::sim::Cluster) -> bool {
    let kind = StateKind::Parameter;
    let Some(rank) = cluster.ranks.iter_mut().find(|r| !r.store(kind).is_empty()) else {
        return false;
    };
    let device = rank.device;
    let (&k, v) = rank.store_mut(kind).iter_mut().next().expect("nonempty store");
    *v ^= 1;
    match verify_state(&cluster, &p.vps, &sc.dst, &sc.world, sc.seed, sc.options.gradients) {
        Ok(v) => v.len() == 1 && v[0].device == device && v[0].kind == kind && v[0].k == k,
        Err(_) => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub results: Vec<TrialResult>,
    pub inject_fault: bool,
}

impl CampaignSummary {
    pub fn passed(&self) -> usize {
        self.results.iter().filter(|r| r.passed()).count()
    }

    pub fn ok(&self) -> bool {
        self.passed() == self.results.len()
    }

    /// One line per trial, then the totals.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let verdict = if r.passed() { "ok" } else { "FAILED" };
            s.push_str(&format!("{}: {} transfers={} {verdict}\n", r.name, r.description, r.transfers));
            for p in &r.problems {
                s.push_str(&format!("  {p}\n"));
            }
            if r.fault_detected == Some(false) {
                s.push_str("  injected fault not detected\n");
            }
        }
        s.push_str(&format!("trials: {}\n", self.results.len()));
        s.push_str(&format!("passed: {}\n", self.passed()));
        s.push_str(&format!("failed: {}\n", self.results.len() - self.passed()));
        if self.inject_fault {
            let detected = self.results.iter().filter(|r| r.fault_detected == Some(true)).count();
            s.push_str(&format!("faults_injected: {}\n", self.results.len()));
            s.push_str(&format!("faults_detected: {detected}\n"));
        }
        s
    }
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignSummary, Failure> {
    if cfg.max_world == 0 {
        return Err(Failure::Input("max world size must be positive".into()));
    }
    let results = sample_trials(cfg).iter().map(|sc| run_trial(sc, cfg.inject_fault)).collect();
    Ok(CampaignSummary { results, inject_fault: cfg.inject_fault })
}
