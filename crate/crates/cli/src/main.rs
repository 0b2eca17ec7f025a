//! `fading-stab`: stabilizability checks, minimum-power design, parameter
//! sweeps and Monte Carlo runs for plants controlled over fading channels.
//!
//! Exit codes: 0 success (or stabilizable), 1 not stabilizable, 2 input
//! error, 3 solver failure, 4 simulation disagrees with the analysis.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, SweepVar};

#[derive(Parser, Debug)]
#[command(name = "fading-stab", version, about = "Stabilization over block-fading channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration (problem, policy, parameters).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Monte Carlo trials.
    #[arg(long, global = true, value_name = "N")]
    trials: Option<usize>,

    /// Simulation horizon in blocks.
    #[arg(long, global = true, value_name = "N")]
    blocks: Option<usize>,

    /// Solver tolerance.
    #[arg(long, global = true, value_name = "FLOAT")]
    tol: Option<f64>,

    /// Use the same power in every channel state.
    #[arg(long, global = true)]
    uniform: bool,

    #[arg(long, global = true, value_enum, value_name = "NAME")]
    sweep_var: Option<SweepVar>,

    /// Sweep grid (or margin-curve grid for lambda-max).
    #[arg(long, global = true, value_name = "START:STOP:STEP")]
    grid: Option<String>,

    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Also write an SVG chart next to the CSV.
    #[arg(long, global = true)]
    svg: bool,

    /// Initial channel state for Markov fading (default: stationary draw).
    #[arg(long, global = true, value_name = "STATE")]
    start_state: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Decide mean-square stabilizability of the configured policy.
    Check,
    /// Largest stabilizable eigenvalue magnitude under the configured policy.
    LambdaMax,
    /// Minimum average power and the policy achieving it.
    MinPower,
    /// Adapted and uniform minimum power over a parameter grid.
    Sweep,
    /// Monte Carlo run of the closed loop.
    Simulate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::LambdaMax => "lambda-max",
            Command::MinPower => "min-power",
            Command::Sweep => "sweep",
            Command::Simulate => "simulate",
        }
    }
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn unstable(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }

    pub fn mismatch(message: impl Into<String>) -> Self {
        Failure { code: 4, message: message.into() }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("FADING_STAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::input(format!("FADING_STAB_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::input(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    configure_threads()?;
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::input("--config PATH is required"))?;
    let file = config::load_file(path)?;
    let flags = Overrides {
        seed: cli.seed,
        trials: cli.trials,
        blocks: cli.blocks,
        tol: cli.tol,
        uniform: cli.uniform,
        sweep_var: cli.sweep_var,
        grid: cli.grid,
        out: cli.out,
        svg: cli.svg,
        start_state: cli.start_state,
    };
    let cfg = config::resolve(cli.command.name(), file, flags)?;
    match cli.command {
        Command::Check => commands::check(&cfg),
        Command::LambdaMax => commands::lambda_max(&cfg),
        Command::MinPower => commands::min_power(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Simulate => commands::simulate(&cfg),
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
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
