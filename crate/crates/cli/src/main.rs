//! `gorqat`, the command-line front end to the training library.
//!
//! Exit codes: 0 success, 1 unexpected internal error, 2 configuration
//! error, 3 training divergence, 4 file read/write or decode error.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gorqat::error::{CheckpointError, DataError};
use gorqat::train::TrainError;
use gorqat::Error;

#[derive(Debug, Parser)]
#[command(name = "gorqat", version, about = "Low-bit training with learnable loss balancing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one student and write a run directory.
    Train(RunArgs),
    /// Compare static distillation weights against the learnable pair.
    Sweep(RunArgs),
    /// Simulate the scalar dynamics without a network.
    Dynamics(DynamicsArgs),
    /// Accuracy of a checkpoint on the configured data.
    Evaluate(EvaluateArgs),
    /// Print what a checkpoint holds.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory. Defaults to $GORQAT_OUT/<run name>, or runs/<run name>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the machine-readable summary to stdout.
    #[arg(long)]
    pub json: bool,
    /// Worker threads for independent runs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides `train.seed`; sweeps count up from it.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// ptq_eval, qat_only, qat_kd_static, qat_kd_gor or qat_ekd_gor.
    #[arg(long)]
    pub mode: Option<String>,
    /// Weight bit-width, 2 to 8, or 32 for full precision.
    #[arg(long)]
    pub wbits: Option<u8>,
    /// Activation bit-width.
    #[arg(long)]
    pub abits: Option<u8>,
    /// Static weight for `train`; comma-separated grid for `sweep`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub alpha: Vec<f64>,
    /// Network learning rate.
    #[arg(long)]
    pub eta_theta: Option<f64>,
    /// Learning rate of the balancing scalars.
    #[arg(long)]
    pub eta_alpha: Option<f64>,
    /// Distillation temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Teacher checkpoints, comma-separated or repeated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub teachers: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DynamicsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub eta_alpha: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// gor, single_scalar or both.
    #[arg(long)]
    pub variant: Option<String>,
    /// Also scan a grid of starting points.
    #[arg(long)]
    pub basin: bool,
    /// Write SVG plots next to the CSV files.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub json: bool,
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Dimension { .. } => 2,
        Error::NonFinite(_) => 3,
        Error::Io(_) | Error::Checkpoint(_) | Error::Data(_) => 4,
        _ => 1,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Diverged { .. } => 3,
                TrainError::Core(e) => core_code(e),
            };
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return core_code(e);
        }
        if cause.is::<CheckpointError>() || cause.is::<DataError>() || cause.is::<std::io::Error>() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Dynamics(a) => commands::dynamics(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("gorqat: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
