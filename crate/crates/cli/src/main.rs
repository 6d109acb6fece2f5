//! `riskdrive` command-line interface.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage or configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskdrive::road::Task;

mod commands;
mod replay;

#[derive(Debug, Parser)]
#[command(
    name = "riskdrive",
    version,
    about = "Risk-prone traffic training and treatment-effect experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one agent and write its checkpoint and training curve
    Train(TrainArgs),
    /// Roll out a trained agent greedily and write per-episode returns
    Evaluate(EvaluateArgs),
    /// Train a treatment/control pair and write its average treatment effect
    Ate(AteArgs),
    /// Run the traffic-density sweep of a task
    Sweep(SweepArgs),
    /// Render an episode trace as ASCII frames or per-tick tables
    Replay(ReplayArgs),
    /// Check a run configuration without running anything
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Task to run; overrides the configured one
    #[arg(long, value_name = "NAME", value_parser = parse_task)]
    task: Option<Task>,
    /// Master seed; overrides RISKDRIVE_SEED and the configured seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Train in the risk-prone treatment environment
    #[arg(long)]
    treatment: bool,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Number of evaluation episodes
    #[arg(long, value_name = "N", default_value_t = 10)]
    episodes: usize,
    /// Evaluate in the risk-prone treatment environment
    #[arg(long)]
    treatment: bool,
    /// Write the first episode as an NDJSON trace
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AteArgs {
    #[command(flatten)]
    common: Common,
    /// Background vehicle count of the traffic level
    #[arg(long, value_name = "N")]
    level: Option<usize>,
    /// Test episodes per environment type
    #[arg(long, value_name = "N")]
    eval_n: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Traffic levels run concurrently
    #[arg(long, value_name = "K")]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// NDJSON episode trace
    #[arg(long, value_name = "PATH")]
    trace: PathBuf,
    /// Playback speed relative to real time (terminal output only)
    #[arg(long, value_name = "X", default_value_t = 1.0)]
    speed: f64,
    /// Draw top-down ASCII frames instead of tables
    #[arg(long)]
    ascii: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Run configuration (JSON)
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: riskdrive::Error| match e {
        riskdrive::Error::Config(m) => m,
        other => other.to_string(),
    })
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<riskdrive::Error> for Failure {
    fn from(e: riskdrive::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ate(a) => commands::ate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Replay(a) => replay::run(a),
        Command::ValidateConfig(a) => commands::validate_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
