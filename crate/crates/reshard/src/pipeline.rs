//! Plan, schedule, load, execute and verify one scenario.

use std::fmt;

use reshard_core::engine::{build_schedule, ScheduleOptions, TransitionSchedule};
use reshard_core::routing::{plan_transition, validate_transition, PlanReport, StateKind, TransitionPlan};
use reshard_core::sim::{
    execute_with, load_state, oracle_reshard, verify_state, Cluster, ExecMode, ExecOptions, ExecReport, Payloads,
    StateViolation,
};
use reshard_core::vps::{build_vps, Vps};
use reshard_core::Error;

use crate::scenario::{Scenario, ScenarioError};

/// A failed command, split by exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    /// Unreadable or inconsistent input.
    Input(String),
    /// A plan, schedule or execution that did not check out.
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Input(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Check(m) => f.write_str(m),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InfeasibleBudget { .. }
            | Error::OutOfMemory { .. }
            | Error::Execution(_)
            | Error::UnreachableState { .. } => Failure::Check(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

/// A planned and scheduled scenario.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vps: Vps,
    pub plan: TransitionPlan,
    pub schedule: TransitionSchedule,
}

/// Plans and schedules `sc`. `budget` replaces the scenario's per-device
/// budgets with one uniform value.
pub fn prepare(sc: &Scenario, budget: Option<u64>) -> Result<Prepared, Failure> {
    let vps = build_vps(sc.model.clone())?;
    let plan = plan_transition(&vps, &sc.src, &sc.dst, &sc.world, &sc.topology, sc.options)?;
    let mem: Vec<u64> = budget.map_or_else(|| sc.budget.clone(), |b| vec![b]);
    let schedule = build_schedule(&vps, &plan, &sc.topology, &mem, ScheduleOptions { collectives: sc.collectives })?;
    Ok(Prepared { vps, plan, schedule })
}

/// Structural checks of the plan against the destination config.
pub fn check_plan(sc: &Scenario, p: &Prepared) -> Result<PlanReport, Failure> {
    Ok(validate_transition(&p.plan, &p.vps, &sc.dst)?)
}

/// A cluster holding the source state.
pub fn load(sc: &Scenario, p: &Prepared, seed: u64) -> Result<Cluster, Failure> {
    let mut cluster = Cluster::new(sc.topology, sc.world.device_count());
    if let Some(cap) = sc.mem_cap {
        cluster = cluster.with_mem_cap(cap);
    }
    load_state(&mut cluster, &p.vps, &sc.src, &sc.world, seed)?;
    Ok(cluster)
}

/// Element-wise differences between two sets of per-device payload maps.
pub fn count_mismatches(a: &[Payloads], b: &[Payloads]) -> usize {
    let mut n = 0;
    for i in 0..a.len().max(b.len()) {
        for kind in StateKind::ALL {
            let x = a.get(i).map(|p| &p[kind.index()]);
            let y = b.get(i).map(|p| &p[kind.index()]);
            match (x, y) {
                (Some(x), Some(y)) => {
                    n += x.iter().filter(|(k, v)| y.get(k) != Some(v)).count();
                    n += y.keys().filter(|k| !x.contains_key(k)).count();
                }
                (Some(m), None) | (None, Some(m)) => n += m.len(),
                (None, None) => {}
            }
        }
    }
    n
}

/// One mode's execution and its verification.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: ExecReport,
    pub violations: Vec<StateViolation>,
    /// Elements that differ from the independent oracle.
    pub oracle_mismatches: usize,
    pub cluster: Cluster,
}

impl RunOutcome {
    pub fn passed(&self, budget: u64) -> bool {
        !self.report.deadlock
            && self.violations.is_empty()
            && self.oracle_mismatches == 0
            && self.report.max_peak() <= budget
    }

    /// Verdict lines appended to the execution report.
    pub fn summary(&self, budget: u64) -> String {
        let mut s = format!("violations: {}\n", self.violations.len());
        for v in self.violations.iter().take(10) {
            s.push_str(&format!("violation: {v}\n"));
        }
        s.push_str(&format!("oracle_mismatches: {}\n", self.oracle_mismatches));
        s.push_str(&format!("peak_within_budget: {}\n", self.report.max_peak() <= budget));
        s.push_str(&format!("verdict: {}\n", if self.passed(budget) { "ok" } else { "FAILED" }));
        s
    }
}

/// The loaded source state and the oracle's prediction of the result,
/// shared by every mode of one run.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub seed: u64,
    pub initial: Cluster,
    pub oracle: Vec<Payloads>,
}

pub fn baseline(sc: &Scenario, p: &Prepared, seed: u64) -> Result<Baseline, Failure> {
    let initial = load(sc, p, seed)?;
    let oracle = oracle_reshard(&initial, &p.vps, &sc.dst, &sc.world, sc.options.gradients)?;
    Ok(Baseline { seed, initial, oracle })
}

/// Executes in `mode` from the baseline's source state, verifies against the
/// canonical payloads and compares with the oracle.
pub fn run_from(
    sc: &Scenario,
    p: &Prepared,
    base: &Baseline,
    mode: ExecMode,
    options: ExecOptions,
) -> Result<RunOutcome, Failure> {
    let mut cluster = base.initial.clone();
    let report = execute_with(&mut cluster, &p.vps, &p.plan, &p.schedule, mode, options)?;
    let (violations, oracle_mismatches) = if report.deadlock {
        (Vec::new(), 0)
    } else {
        let v = verify_state(&cluster, &p.vps, &sc.dst, &sc.world, base.seed, sc.options.gradients)?;
        let payloads = cluster.payloads();
        let diff = if payloads == base.oracle { 0 } else { count_mismatches(&payloads, &base.oracle) };
        (v, diff)
    };
    Ok(RunOutcome { report, violations, oracle_mismatches, cluster })
}

/// [`baseline`] followed by [`run_from`].
pub fn run_mode(
    sc: &Scenario,
    p: &Prepared,
    mode: ExecMode,
    seed: u64,
    options: ExecOptions,
) -> Result<RunOutcome, Failure> {
    run_from(sc, p, &baseline(sc, p, seed)?, mode, options)
}

/// Executes `sc` and then its reverse on the resulting cluster. Returns the
/// number of elements that differ from the initial load; gradients are not
/// compared since the switch may drop them.
pub fn round_trip(sc: &Scenario, seed: u64, budget: Option<u64>) -> Result<usize, Failure> {
    let fwd = prepare(sc, budget)?;
    let back_sc = sc.reversed();
    let back = prepare(&back_sc, budget)?;
    let mut cluster = load(sc, &fwd, seed)?;
    let initial = cluster.payloads();
    for (s, p) in [(sc, &fwd), (&back_sc, &back)] {
        let r = execute_with(&mut cluster, &p.vps, &p.plan, &p.schedule, s.mode, ExecOptions::default())?;
        if r.deadlock {
            return Err(Failure::Check(format!("{}: deadlock, witness {:?}", s.name, r.witness)));
        }
        cluster.reset_runtime();
    }
    let strip = |mut v: Vec<Payloads>| {
        for p in &mut v {
            p[StateKind::Gradient.index()].clear();
        }
        v
    };
    Ok(count_mismatches(&strip(initial), &strip(cluster.payloads())))
}
