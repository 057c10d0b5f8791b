//! `dlgp` — surrogate modeling for stochastic simulators from the command
//! line: simulate a design, collapse replicates to quantile trajectories,
//! train the deep-feature GP mixture, predict with intervals, benchmark
//! against baselines, and score held-out scenarios.
//!
//! Exit codes: 0 success, 2 user/config error, 1 internal failure.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "dlgp", version, about = "Deep-feature GP surrogates for stochastic simulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stochastic trajectory simulator over a symmetric space-filling design.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides [simulate].seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides [data].replicates as the output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collapse simulator replicates into per-scenario quantile trajectories.
    PrepQuantiles {
        #[arg(long)]
        config: PathBuf,
        /// Overrides [data].quantile_design as the output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the surrogate; writes the model file and a likelihood trace.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides [train].seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Model file path (default <output.dir>/model.json; the trace lands
        /// beside it as trace.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior mean and central interval per output at query points.
    Predict {
        #[arg(long)]
        config: PathBuf,
        /// Model file (default <output.dir>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Query CSV (header plus one input row per line). Defaults to the
        /// configured holdout scenarios' quantile-design inputs.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Output CSV (default <output.dir>/predictions.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Central-interval coverage (default [output].level).
        #[arg(long)]
        level: Option<f64>,
        /// Also write each query's predictive covariance to this tidy CSV.
        #[arg(long)]
        dump_covariance: Option<PathBuf>,
    },
    /// Score surrogates over random train/test splits of the impact dataset.
    BenchmarkMotorcycle {
        #[arg(long)]
        config: PathBuf,
        /// Overrides [splits].count.
        #[arg(long)]
        splits: Option<usize>,
        /// Comma-separated subset of: dl-gp, gp, q-dl, mean.
        #[arg(long)]
        models: Option<String>,
        /// Overrides [splits].seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report CSV path (default <output.dir>/motorcycle-report.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare held-out quantile trajectories against predicted bands.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Band CSV path (default <output.dir>/holdout-bands.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> dlgp::Result<()> {
    match command {
        Command::Simulate { config, seed, out } => {
            commands::simulate(&ExperimentConfig::load(&config)?, seed, out)
        }
        Command::PrepQuantiles { config, out } => {
            commands::prep_quantiles(&ExperimentConfig::load(&config)?, out)
        }
        Command::Train { config, seed, out } => {
            commands::train(&ExperimentConfig::load(&config)?, seed, out)
        }
        Command::Predict { config, model, queries, out, level, dump_covariance } => {
            commands::predict(
                &ExperimentConfig::load(&config)?,
                model,
                queries,
                out,
                level,
                dump_covariance,
            )
        }
        Command::BenchmarkMotorcycle { config, splits, models, seed, out } => {
            commands::benchmark_motorcycle(
                &ExperimentConfig::load(&config)?,
                splits,
                models,
                seed,
                out,
            )
        }
        Command::Evaluate { config, out } => {
            commands::evaluate(&ExperimentConfig::load(&config)?, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
