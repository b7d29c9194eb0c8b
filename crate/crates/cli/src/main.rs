//! Batch front-end: `taperkrige <simulate|variogram|estimate|predict|evaluate> --config <json>`.
//!
//! Exit codes: 0 on success, 1 when the numerics fail after a valid setup, 2 for
//! configuration, ingest and I/O errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taperkrige::Error;

use commands::Run;

#[derive(Parser)]
#[command(
    name = "taperkrige",
    version,
    about = "Tapered-likelihood estimation and kriging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Gaussian random field; writes data.csv and truth.json.
    Simulate(Common),
    /// Empirical variogram and starting values; writes variogram.csv and guess.json.
    Variogram(Common),
    /// Fit covariance parameters; writes estimate.json.
    Estimate(Common),
    /// Simple kriging with a fitted model; writes predictions.csv.
    Predict(Common),
    /// Simulate, fit, predict and score over a grid; writes experiment.csv.
    Evaluate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        1
    } else {
        2
    }
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    if let Error::Ingest { indices, .. } = e {
        if !indices.is_empty() {
            let shown: Vec<String> = indices.iter().take(10).map(|i| i.to_string()).collect();
            let more = if indices.len() > 10 { ", ..." } else { "" };
            eprintln!("offending rows: {}{more}", shown.join(", "));
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run_fn, common): (fn(&Run) -> taperkrige::Result<()>, Common) = match cli.command {
        Command::Simulate(c) => (commands::simulate, c),
        Command::Variogram(c) => (commands::variogram, c),
        Command::Estimate(c) => (commands::estimate_cmd, c),
        Command::Predict(c) => (commands::predict, c),
        Command::Evaluate(c) => (commands::evaluate, c),
    };
    if let Some(t) = common.threads {
        if t == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: cannot set up the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let run = Run {
        config: common.config,
        seed: common.seed,
        out: common.out,
    };
    match run_fn(&run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
