//! `stochred`: scenario-file driver for reduction simulations.
//!
//! Exit status: 0 pass, 1 verification failure, 2 configuration or I/O failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "stochred",
    version,
    about = "Stochastic state-reduction simulations and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Geometry invariants at sampled points of the backend.
    GeometryCheck(Common),
    /// Observable identities at sampled points.
    Identities(Common),
    /// Run the ensemble and write the time series and summary.
    Simulate(Common),
    /// Identities plus the full statistical battery.
    Verify(Common),
    /// Re-run a simulation with the seed recorded in a summary and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Treat inconclusive verdicts as failures.
    #[arg(long)]
    pub strict: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub common: Common,
    /// Summary to replay; defaults to `<recorded output dir>/summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GeometryCheck(c) => commands::geometry_check(c),
        Command::Identities(c) => commands::identities(c),
        Command::Simulate(c) => commands::simulate(c),
        Command::Verify(c) => commands::verify(c),
        Command::Replay(r) => commands::replay(r),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(2)
        }
    }
}
