//! `nrc-lab`: synthetic regression data, closed-form UFM optima, training runs,
//! collapse metrics and parameter sweeps.

mod cmd;
mod config;
mod data;
mod error;
mod sigma;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Format, Global};

#[derive(Debug, Parser)]
#[command(name = "nrc-lab", version, about = "Neural regression collapse experiments")]
struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short = 'o', long, global = true)]
    out: Option<PathBuf>,
    /// Format of reports, traces and sweep tables.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a prescribed target covariance.
    Gen(cmd::gen::GenArgs),
    /// Closed-form global minimum and its collapse report.
    Solve(cmd::solve::SolveArgs),
    /// Gradient-descent training.
    #[command(subcommand)]
    Train(cmd::train::TrainCommand),
    /// Collapse metrics of stored matrices.
    Metrics(cmd::metrics::MetricsArgs),
    /// Run a grid of independent cells and write one long-format table.
    Sweep(cmd::sweep::SweepArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let global = Global { seed: cli.seed, out: cli.out, format: cli.format };
    let result = match cli.command {
        Command::Gen(a) => cmd::gen::run(a, &global),
        Command::Solve(a) => cmd::solve::run(a, &global),
        Command::Train(c) => cmd::train::run(c, &global),
        Command::Metrics(a) => cmd::metrics::run(a, &global),
        Command::Sweep(a) => cmd::sweep::run(a, &global),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
