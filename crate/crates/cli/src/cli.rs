//! Argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands;
use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "neurfs", version, about = "Neural frequency-severity models for insurance claims")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-covariate benchmark dataset.
    Simulate(SimulateArgs),
    /// Fit the frequency and severity parts from a run configuration.
    Train(TrainArgs),
    /// Per-record frequency, severity and aggregate-loss predictions.
    Predict(PredictArgs),
    /// Error metrics and pairwise Gini indices for one or more models.
    Evaluate(EvaluateArgs),
    /// Shapley attributions of the frequency and severity means.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of records.
    #[arg(long, default_value_t = 40_000)]
    pub rows: usize,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Where the records come from.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Encoded dataset CSV, or a raw claims CSV when `--schema` is given.
    #[arg(long)]
    pub data: PathBuf,
    /// Column description of a raw claims CSV.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file; repeat to compare several.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Also score against the synthetic generator's true functions on the 11×11 grid.
    #[arg(long)]
    pub grid: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Frequency,
    Severity,
    Both,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Zero-based record positions to explain.
    #[arg(long, value_delimiter = ',', conflicts_with = "global", required_unless_present = "global")]
    pub records: Vec<usize>,
    /// Explain every record and summarise global importance.
    #[arg(long)]
    pub global: bool,
    #[arg(long, value_enum, default_value_t = TargetArg::Both)]
    pub target: TargetArg,
    /// Background sample size, drawn from the data.
    #[arg(long, default_value_t = 100)]
    pub background: usize,
    /// Use permutation sampling with this many permutations instead of exact enumeration.
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), Failure> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, seed.unwrap_or(1)),
        Command::Train(a) => commands::train(&a, seed),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Explain(a) => commands::explain(&a, seed.unwrap_or(1)),
    }
}
