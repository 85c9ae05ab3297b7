//! `groupuq`: group lasso fits, bootstrap inference and simulation studies.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use groupuq::Execution;
use log::info;

use crate::commands::{Context, Outputs};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "groupuq", version, about = "Bootstrap uncertainty quantification for the group lasso")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration (simulate, sweep, rho-check).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to available parallelism. 1 runs serially.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Group lasso fit at a fixed or cross-validated lambda.
    Fit,
    /// Full inference pipeline on a dataset.
    Infer,
    /// Monte Carlo study over simulated settings.
    Simulate,
    /// Threshold sensitivity sweep.
    Sweep,
    /// Monte Carlo check of the rho bound.
    RhoCheck,
    /// Correlation-based grouping of a CSV matrix.
    GroupCorr,
}

fn run(cli: &Cli) -> Result<Outputs> {
    if let Some(config) = &cli.config {
        if !config.is_file() {
            return Err(CliError::Read {
                file: config.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "config file not found"),
            });
        }
    }
    let workers = match cli.workers {
        Some(0) => return Err(CliError::Usage { message: "--workers must be at least 1".into() }),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let ctx = Context {
        config: cli.config.clone(),
        preset: cli.preset.clone(),
        seed: cli.seed,
        exec: if workers == 1 { Execution::Sequential } else { Execution::Parallel },
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage { message: format!("cannot start {workers} workers: {e}") })?;
    info!("running {:?} with {workers} workers", cli.command);
    pool.install(|| match cli.command {
        Command::Fit => commands::fit_command(&ctx),
        Command::Infer => commands::infer_command(&ctx),
        Command::Simulate => commands::simulate_command(&ctx),
        Command::Sweep => commands::sweep_command(&ctx),
        Command::RhoCheck => commands::rho_command(&ctx),
        Command::GroupCorr => commands::group_corr_command(&ctx),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GROUPUQ_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = run(&cli).and_then(|out| {
        out.write(&cli.out)?;
        Ok(out)
    });
    match result {
        Ok(out) => {
            for name in out.names() {
                println!("{}", cli.out.join(name).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = serde_json::json!({ "error": e.report() });
            eprintln!("{report}");
            ExitCode::from(e.exit_code())
        }
    }
}
