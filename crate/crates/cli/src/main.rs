//! `psfedgan` command-line runner.
//!
//! Exit codes: 0 success, 1 I/O failure while writing outputs, 2 bad
//! invocation or configuration, 3 error during the run, 4 replay mismatch.

mod config;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "psfedgan", version, about = "Federated cGAN simulator with discriminator-only publishing")]
struct Cli {
    /// Worker threads for per-user timelines.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Validate the config and print resolved sizes without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation from a TOML config.
    Run { config: PathBuf },
    /// Rebuild server generators from a replay log and check their digests.
    Replay { log: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => commands::run(config, cli.out.as_deref(), cli.threads, cli.dry_run),
        Command::Replay { log } => commands::replay(log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("psfedgan: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
