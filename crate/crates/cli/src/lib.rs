//! `lrmc`: simulate chains, estimate transition matrices, run benchmark sweeps
//! and aggregate states from the command line.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lrmc", version, about = "Low-rank Markov chain estimation from trajectories")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for every random draw (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for benchmark rolls (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a low-rank chain and simulate a trajectory from it.
    Simulate(SimulateArgs),
    /// Estimate a transition matrix from a trajectory or a count matrix.
    Estimate(EstimateArgs),
    /// Run a synthetic benchmark sweep.
    Benchmark(BenchmarkArgs),
    /// Cluster the states of a transition log.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Number of transitions.
    #[arg(long)]
    pub n: Option<usize>,
    /// Beta parameters of the imbalanced model, e.g. `0.5,0.5`.
    #[arg(long, value_delimiter = ',')]
    pub imbalance: Option<Vec<f64>>,
    /// `stationary`, `uniform` or a state index.
    #[arg(long)]
    pub initial: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct LambdaArgs {
    /// `cv`, `scaled` or `fixed`.
    #[arg(long)]
    pub lambda_rule: Option<String>,
    /// Constant for `scaled`, weight for `fixed`.
    #[arg(long)]
    pub lambda_value: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct EstimateArgs {
    /// Trajectory file (`# p=<int>` header, one state per line).
    #[arg(long, conflicts_with = "counts")]
    pub trajectory: Option<PathBuf>,
    /// Count matrix file (comma-separated integers).
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// empirical | nuclear | rank | spectral
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub r: Option<usize>,
    #[command(flatten)]
    pub lambda: LambdaArgs,
}

#[derive(Debug, Args, Default)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Comma-separated sample-size multipliers.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub rolls: Option<usize>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub imbalance: Option<Vec<f64>>,
    /// Record wall times (outputs are then no longer reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Skip the plot-data file.
    #[arg(long)]
    pub no_plot: bool,
    #[command(flatten)]
    pub lambda: LambdaArgs,
}

#[derive(Debug, Args, Default)]
pub struct AggregateArgs {
    /// Transition log: CSV of `from_id,to_id` pairs.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub min_visits: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[command(flatten)]
    pub lambda: LambdaArgs,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::execute(cli) {
        Ok(()) => error::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
