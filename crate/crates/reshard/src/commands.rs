//! The subcommands as plain functions: each returns its standard output or
//! a [`Failure`] carrying the output produced so far.

use std::path::Path;

use reshard_core::elastic::{
    format_timeline, get_or_create_groups, simulate_scale_event, GroupCache, InitCostTable, ScaleMode,
    WorldTransition,
};
use reshard_core::routing::plan_dataset;
use reshard_core::sim::{format_report, ExecMode, ExecOptions};

use crate::campaign::{run_campaign, CampaignConfig};
use crate::dump::{plan_dump, schedule_dump};
use crate::pipeline::{baseline, check_plan, prepare, round_trip, run_from, run_mode, Failure};
use crate::scenario::Scenario;

/// Output of a command and whether its checks passed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub ok: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.ok {
            0
        } else {
            1
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn header(sc: &Scenario) -> String {
    format!(
        "scenario: {}\ntransition: {} -> {}\ndevices: {}\n",
        sc.name,
        sc.src,
        sc.dst,
        sc.world.device_count()
    )
}

/// Prints the plan dump, or writes it to `dump` and prints a summary.
pub fn plan(sc: &Scenario, budget: Option<u64>, dump: Option<&Path>) -> Result<Outcome, Failure> {
    let p = prepare(sc, budget)?;
    let report = check_plan(sc, &p)?;
    let text = plan_dump(&p.vps, &p.plan);
    let mut stdout = String::new();
    match dump {
        Some(path) => {
            write_file(path, &text)?;
            stdout.push_str(&header(sc));
            stdout.push_str(&format!(
                "transfers: {}\nbytes_moved: {}\nbytes_retained: {}\n",
                report.transfers, report.bytes_moved, report.bytes_retained
            ));
        }
        None => stdout.push_str(&text),
    }
    for v in &report.violations {
        stdout.push_str(&format!("violation: {v}\n"));
    }
    Ok(Outcome { stdout, ok: report.is_ok() })
}

/// Which modes a `--mode` value selects.
pub fn parse_modes(s: &str) -> Result<Vec<ExecMode>, Failure> {
    if s == "all" {
        return Ok(ExecMode::ALL.to_vec());
    }
    ExecMode::parse(s)
        .map(|m| vec![m])
        .ok_or_else(|| Failure::Input(format!("unknown mode `{s}` (naive, buffer-sync, buffer-async, all)")))
}

pub struct RunArgs<'a> {
    pub modes: Option<Vec<ExecMode>>,
    pub seed: Option<u64>,
    pub budget: Option<u64>,
    pub dump: Option<&'a Path>,
    pub trace: bool,
}

/// Executes the scenario in each selected mode and verifies the result.
pub fn run(sc: &Scenario, args: &RunArgs<'_>) -> Result<Outcome, Failure> {
    let p = prepare(sc, args.budget)?;
    if let Some(path) = args.dump {
        write_file(path, &schedule_dump(&p.vps, &p.schedule))?;
    }
    let seed = args.seed.unwrap_or(sc.seed);
    let modes = args.modes.clone().unwrap_or_else(|| vec![sc.mode]);
    let mut stdout = header(sc);
    stdout.push_str(&format!("seed: {seed}\n"));
    let mut ok = true;
    let mut times = Vec::new();
    let base = baseline(sc, &p, seed)?;
    for mode in modes {
        stdout.push('\n');
        let out = run_from(sc, &p, &base, mode, ExecOptions::default())?;
        stdout.push_str(&format_report(&out.report));
        stdout.push_str(&out.summary(p.schedule.budget));
        if args.trace {
            for e in &out.report.trace {
                stdout.push_str(&format!(
                    "trace time={:.9} src={} dst={} bytes={} step={} stage={}\n",
                    e.time, e.src, e.dst, e.bytes, e.step, e.stage
                ));
            }
        }
        ok &= out.passed(p.schedule.budget);
        times.push((mode, out.report.sim_time));
    }
    if times.len() == ExecMode::ALL.len() {
        let monotone = times.windows(2).all(|w| w[1].1 <= w[0].1);
        stdout.push_str(&format!("\nmode_ordering: {}\n", if monotone { "monotone" } else { "NOT monotone" }));
    }
    Ok(Outcome { stdout, ok })
}

/// Plan checks, every mode, and a round trip back to the source layout.
pub fn verify(sc: &Scenario, seed: Option<u64>, budget: Option<u64>) -> Result<Outcome, Failure> {
    let seed = seed.unwrap_or(sc.seed);
    let p = prepare(sc, budget)?;
    let report = check_plan(sc, &p)?;
    let mut stdout = header(sc);
    let mut ok = report.is_ok();
    stdout.push_str(&format!("plan: {} violations\n", report.violations.len()));
    let base = baseline(sc, &p, seed)?;
    for mode in ExecMode::ALL {
        let out = run_from(sc, &p, &base, mode, ExecOptions::default())?;
        let pass = out.passed(p.schedule.budget);
        ok &= pass;
        stdout.push_str(&format!(
            "{mode}: {} (violations {}, oracle mismatches {}, deadlock {})\n",
            if pass { "ok" } else { "FAILED" },
            out.violations.len(),
            out.oracle_mismatches,
            out.report.deadlock
        ));
    }
    let diff = round_trip(sc, seed, budget)?;
    ok &= diff == 0;
    stdout.push_str(&format!("round_trip: {} ({diff} elements differ)\n", if diff == 0 { "ok" } else { "FAILED" }));
    if let Some(d) = sc.data {
        let plan = plan_dataset(&sc.src, &sc.dst, d.consumed, d.batch)?;
        let first: Vec<u64> = (0..plan.dp).flat_map(|r| plan.assignment(0, r)).collect();
        let contiguous = first.iter().copied().eq(d.consumed..d.consumed + d.batch.global_batch);
        ok &= contiguous;
        stdout.push_str(&format!(
            "dataset: {} (resume at {}, {} samples per rank)\n",
            if contiguous { "ok" } else { "FAILED" },
            d.consumed,
            plan.samples_per_rank
        ));
    }
    stdout.push_str(&format!("verdict: {}\n", if ok { "ok" } else { "FAILED" }));
    Ok(Outcome { stdout, ok })
}

/// Sim times of the three modes in one direction, in `ExecMode::ALL` order.
pub fn mode_times(sc: &Scenario, seed: u64, budget: Option<u64>) -> Result<([f64; 3], bool), Failure> {
    let p = prepare(sc, budget)?;
    let mut times = [0.0; 3];
    let mut ok = true;
    let base = baseline(sc, &p, seed)?;
    for (i, mode) in ExecMode::ALL.into_iter().enumerate() {
        let out = run_from(sc, &p, &base, mode, ExecOptions::default())?;
        ok &= out.passed(p.schedule.budget);
        times[i] = out.report.sim_time;
    }
    Ok((times, ok))
}

/// All three modes in both directions with the speedup of each
/// optimization.
pub fn ablate(sc: &Scenario, seed: Option<u64>, budget: Option<u64>) -> Result<Outcome, Failure> {
    let seed = seed.unwrap_or(sc.seed);
    let mut stdout = String::new();
    let mut ok = true;
    for s in [sc.clone(), sc.reversed()] {
        let ([naive, sync, asynch], pass) = mode_times(&s, seed, budget)?;
        ok &= pass;
        stdout.push_str(&format!("direction: {} -> {}\n", s.src, s.dst));
        stdout.push_str(&format!("naive: {naive:.9}\nbuffer-sync: {sync:.9}\nbuffer-async: {asynch:.9}\n"));
        stdout.push_str(&format!("speedup_buffer: {:.3}\n", ratio(naive, sync)));
        stdout.push_str(&format!("speedup_async: {:.3}\n", ratio(sync, asynch)));
        stdout.push_str(&format!("speedup_total: {:.3}\n", ratio(naive, asynch)));
        let strict = asynch < sync && sync < naive;
        stdout.push_str(&format!("ordering: {}\n\n", if strict { "async < sync < naive" } else { "NOT strict" }));
    }
    stdout.push_str(&format!("verdict: {}\n", if ok { "ok" } else { "FAILED" }));
    Ok(Outcome { stdout, ok })
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

pub struct ScaleArgs<'a> {
    pub scenario: Option<&'a Scenario>,
    pub old_nodes: u32,
    pub new_nodes: u32,
    pub init_cost: Option<f64>,
    pub step_cost: f64,
    pub switch_cost: Option<f64>,
    pub modes: Vec<ScaleMode>,
}

/// Scale-event timelines. The switch cost defaults to the buffer-async sim
/// time of the scenario, when one is given.
pub fn scale(args: &ScaleArgs<'_>) -> Result<Outcome, Failure> {
    for (name, v) in [("step cost", Some(args.step_cost)), ("init cost", args.init_cost), ("switch cost", args.switch_cost)] {
        if let Some(v) = v {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Failure::Input(format!("{name} must be a non-negative number")));
            }
        }
    }
    let mut stdout = String::new();
    let switch = match (args.switch_cost, args.scenario) {
        (Some(s), _) => s,
        (None, Some(sc)) => {
            let p = prepare(sc, None)?;
            let out = run_mode(sc, &p, ExecMode::BufferAsync, sc.seed, ExecOptions::default())?;
            if !out.passed(p.schedule.budget) {
                return Err(Failure::Check(format!("{}: transition failed verification", sc.name)));
            }
            let mut cache = GroupCache::default();
            let (_, group_cost) = get_or_create_groups(&mut cache, &sc.dst)?;
            stdout.push_str(&format!("transition_time: {:.9}\ngroup_setup: {group_cost:.3}\n", out.report.sim_time));
            out.report.sim_time + group_cost
        }
        (None, None) => 0.0,
    };
    let old: Vec<u32> = (0..args.old_nodes).collect();
    let new: Vec<u32> = (0..args.new_nodes).collect();
    let mut t = WorldTransition::from_nodes(old, new, &InitCostTable::default(), args.step_cost, switch);
    if let Some(init) = args.init_cost {
        t.init_cost = init;
    }
    stdout.push_str(&format!("nodes: {} -> {}\nswitch_cost: {switch:.3}\n", args.old_nodes, args.new_nodes));
    for mode in &args.modes {
        stdout.push('\n');
        stdout.push_str(&format_timeline(&simulate_scale_event(&t, *mode)));
    }
    Ok(Outcome { stdout, ok: true })
}

pub fn campaign(cfg: &CampaignConfig) -> Result<Outcome, Failure> {
    let summary = run_campaign(cfg)?;
    Ok(Outcome { stdout: summary.render(), ok: summary.ok() })
}
