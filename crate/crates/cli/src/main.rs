//! `isoflop`: simulate, fit, compare, QC and sweep IsoFLOP experiments.

mod commands;
mod config;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isoflop_core::{Error, Result};

use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "isoflop", version, about = "Compute-optimal scaling-law fitting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write a synthetic IsoFLOP experiment as CSV
    Simulate,
    /// Fit one method and report the result
    Fit,
    /// Fit several methods side by side
    Compare,
    /// Annotate points with quality-control statuses
    Qc,
    /// Deadweight compute loss of an inferred allocation law
    Dcl,
    /// Monte Carlo comparison of estimators
    Sweep,
    /// Conditioning, gradient and residual diagnostics of a fit
    Diagnose,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Data(_) | Error::NonFinite { .. } => 3,
        _ => 4,
    }
}

fn run(command: Command, cfg: &RunConfig) -> Result<()> {
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    match command {
        Command::Simulate => commands::simulate_cmd(cfg),
        Command::Fit => commands::fit_cmd(cfg),
        Command::Compare => commands::compare_cmd(cfg),
        Command::Qc => commands::qc_cmd(cfg),
        Command::Dcl => commands::dcl_cmd(cfg),
        Command::Sweep => commands::sweep_cmd(cfg),
        Command::Diagnose => commands::diagnose_cmd(cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.overrides.resolve().and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
