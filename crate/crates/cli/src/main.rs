//! `gmf`: build and inspect decomposition caches, run benchmarks.
//!
//! Exit status: 0 success, 1 error, 2 finished with warnings, 3 a filter failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gmf_core::decomp::DecompositionKind;

use commands::Status;
use config::ExperimentSpec;

/// Overrides the benchmark worker count.
const WORKERS_ENV: &str = "GMF_WORKERS";

#[derive(Parser)]
#[command(name = "gmf", version, about = "Gaussian mixture filters with transition density decompositions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a decomposition and write its cache file.
    Decompose {
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// Run the Monte Carlo benchmark and write CSV files.
    Bench {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        mc_runs: Option<u64>,
    },
    /// Summarize a cache file.
    Inspect { cache: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fsg,
    Psg,
}

fn workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{WORKERS_ENV}='{v}' is not a count"))?;
            anyhow::ensure!(n >= 1, "{WORKERS_ENV} must be at least 1");
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Decompose { config, kind } => {
            let spec = ExperimentSpec::load(&config)?;
            let kind = match kind {
                Kind::Fsg => DecompositionKind::Fsg,
                Kind::Psg => DecompositionKind::Psg,
            };
            commands::decompose(&spec, kind)
        }
        Command::Bench { config, seed, mc_runs } => {
            let mut spec = ExperimentSpec::load(&config)?;
            if let Some(s) = seed {
                spec.benchmark.seed = s;
            }
            if let Some(m) = mc_runs {
                spec.benchmark.mc_runs = m as usize;
            }
            commands::bench(&spec, workers()?)
        }
        Command::Inspect { cache } => commands::inspect(&cache),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Warning) => ExitCode::from(2),
        Ok(Status::FilterFailure) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
