//! `qtmlab`: generate instances, certify equilibria, sweep bounds and run
//! the two-stage mechanism.
//!
//! Exit codes: 0 certified, 1 measured but uncertified, 2 usage or parse
//! error, 3 solver failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Context;
use error::CliError;

type Handler = fn(&Context) -> Result<bool, CliError>;

#[derive(Parser)]
#[command(
    name = "qtmlab",
    version,
    about = "Quadratic transfers: solve, certify and sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random instance file.
    Generate(Common),
    /// Solve one instance and certify its equilibrium and bounds.
    Solve(Common),
    /// Solve a grid of generated instances and compare against the bounds.
    Sweep(Common),
    /// Run the two-stage aggregation + decision mechanism.
    Squap(Common),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Exit 1 unless every applicable bound holds.
    Certified,
    /// Record measurements; exit 0 on any completed run.
    Measure,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, env = "QTMLAB_JOBS", value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    #[arg(long, value_enum, default_value_t = Mode::Certified)]
    mode: Mode,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Command::Generate(c) => (commands::generate as Handler, c),
        Command::Solve(c) => (commands::solve as Handler, c),
        Command::Sweep(c) => (commands::sweep as Handler, c),
        Command::Squap(c) => (commands::squap as Handler, c),
    };
    let ctx = Context {
        config: &common.config,
        seed: common.seed,
        out: &common.out,
        jobs: common.jobs.map(|j| j as usize),
    };
    match command(&ctx) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if common.mode == Mode::Measure => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
