//! Command-line front end: transport distances, bound reports, training runs
//! and the two-cluster figure data, all driven by a seed and a JSON config.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{ExperimentConfig, TaskKind, TaskSpec};
pub use error::{CliError, CliResult, EXIT_DIVERGENCE, EXIT_INPUT, EXIT_OK, EXIT_TRAINING};

#[derive(Debug, Parser)]
#[command(name = "darsa", version, about = "Sub-domain alignment experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transport distance between two CSV clouds or two mixture files.
    Ot(OtArgs),
    /// Sub-domain versus overall bound terms for a source/target pair.
    Bounds(BoundsArgs),
    /// Pretrain and adapt, logging metrics and bound terms per epoch.
    Train(TrainArgs),
    /// Per-cluster distances on the two-cluster 1-D task.
    Figure1(Figure1Args),
    /// Write a synthetic task to CSV.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Exact1d,
    Exact,
    Sinkhorn,
    Mw1,
}

#[derive(Debug, Args)]
pub struct OtArgs {
    /// Source CSV, or a mixture JSON with --method mw1.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum, default_value = "sinkhorn")]
    pub method: Method,
    #[arg(long, default_value_t = 0.01)]
    pub reg: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
    /// Include the coupling matrix in the output.
    #[arg(long)]
    pub plan: bool,
    /// Also write the result to DIR/ot.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Labelled source CSV.
    #[arg(long)]
    pub source: PathBuf,
    /// Target CSV; a label column, if present, is ignored.
    #[arg(long)]
    pub target: PathBuf,
    /// Model checkpoint; without one, raw features and a nearest source
    /// centroid rule are used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub reg: f64,
    /// Rows per domain entering the transport terms.
    #[arg(long, default_value_t = 1000)]
    pub max_rows: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the config's task with this kind's defaults when they differ.
    #[arg(long, value_enum)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Source CSV for --task csv.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target CSV for --task csv.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value = "darsa-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Figure1Args {
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// JSON task spec (the `task` object of a training config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gmm")]
    pub task: TaskKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Runs one subcommand and returns its exit code, reporting errors on stderr.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Ot(a) => commands::ot::run(&a),
        Command::Bounds(a) => commands::bounds::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Figure1(a) => commands::figure1::run(&a),
        Command::Gen(a) => commands::gen::run(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
