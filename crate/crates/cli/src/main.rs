//! `fv-lab`: simulation, exact oracles and bound evaluation for
//! Fleming–Viot particle systems.

mod commands;
mod config;
mod verify;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use config::{Command, RunArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "fv-lab", version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[command(flatten)]
    args: RunArgs,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FV_LAB_THREADS") {
        let n: usize = v.parse().with_context(|| format!("FV_LAB_THREADS={v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = RunConfig::resolve(cli.command, cli.args)?;
    match cfg.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Couple => commands::couple(&cfg),
        Command::Qsd => commands::qsd_cmd(&cfg),
        Command::Spectrum => commands::spectrum_cmd(&cfg),
        Command::Invariant => commands::invariant(&cfg),
        Command::Bounds => commands::bounds(&cfg),
        Command::Verify => verify::verify(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fv-lab: {e:#}");
            ExitCode::FAILURE
        }
    }
}
