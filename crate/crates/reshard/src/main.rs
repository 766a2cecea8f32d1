use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reshard::campaign::CampaignConfig;
use reshard::commands::{self, Outcome, RunArgs, ScaleArgs};
use reshard::{Failure, Scenario};
use reshard_core::elastic::ScaleMode;

/// Plan, schedule and simulate resharding of training state.
#[derive(Parser)]
#[command(name = "reshard", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the routing plan dump.
    Plan {
        scenario: PathBuf,
        /// Uniform per-device transient memory budget in bytes.
        #[arg(long)]
        budget: Option<u64>,
        /// Write the dump here and print a summary instead.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Execute on the simulated cluster and verify the result.
    Run {
        scenario: PathBuf,
        /// naive, buffer-sync, buffer-async or all.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<u64>,
        /// Write the schedule dump here.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Print one line per delivered message.
        #[arg(long)]
        trace: bool,
    },
    /// Check the plan, every mode and the round trip.
    Verify {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Run random transitions on a toy model.
    Campaign {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        max_world: u32,
        /// Corrupt one element per trial and require detection.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Compare the three execution modes in both directions.
    Ablate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Account a scale event with background world initialization.
    Scale {
        /// Take the switch cost from this scenario's simulated transition.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        old_nodes: u32,
        #[arg(long, default_value_t = 3)]
        new_nodes: u32,
        /// Seconds; defaults to the built-in table for the new node count.
        #[arg(long)]
        init_cost: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        step_cost: f64,
        /// Seconds; overrides the scenario's simulated time.
        #[arg(long)]
        switch_cost: Option<f64>,
        /// in-place, overlapped, blocking or all.
        #[arg(long, default_value = "all")]
        mode: String,
    },
}

fn load(path: &PathBuf) -> Result<Scenario, Failure> {
    Ok(Scenario::load(path)?)
}

fn dispatch(cmd: Command) -> Result<Outcome, Failure> {
    match cmd {
        Command::Plan { scenario, budget, dump } => commands::plan(&load(&scenario)?, budget, dump.as_deref()),
        Command::Run { scenario, mode, seed, budget, dump, trace } => {
            let sc = load(&scenario)?;
            let modes = mode.as_deref().map(commands::parse_modes).transpose()?;
            commands::run(&sc, &RunArgs { modes, seed, budget, dump: dump.as_deref(), trace })
        }
        Command::Verify { scenario, seed, budget } => commands::verify(&load(&scenario)?, seed, budget),
        Command::Campaign { trials, seed, max_world, inject_fault } => commands::campaign(&CampaignConfig {
            trials,
            seed,
            max_world,
            inject_fault,
            ..CampaignConfig::default()
        }),
        Command::Ablate { scenario, seed, budget } => commands::ablate(&load(&scenario)?, seed, budget),
        Command::Scale { scenario, old_nodes, new_nodes, init_cost, step_cost, switch_cost, mode } => {
            let modes = match mode.as_str() {
                "all" => vec![ScaleMode::InPlace, ScaleMode::Overlapped, ScaleMode::Blocking],
                m => vec![ScaleMode::parse(m).ok_or_else(|| {
                    Failure::Input(format!("unknown scale mode `{m}` (in-place, overlapped, blocking, all)"))
                })?],
            };
            let sc = scenario.as_ref().map(load).transpose()?;
            commands::scale(&ScaleArgs {
                scenario: sc.as_ref(),
                old_nodes,
                new_nodes,
                init_cost,
                step_cost,
                switch_cost,
                modes,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.stdout.as_bytes());
            ExitCode::from(out.exit_code())
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
