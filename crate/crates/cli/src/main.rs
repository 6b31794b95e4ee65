//! Command-line front end for the reachability toolkit.

mod commands;
mod config;
mod csv;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "hjreach", version, about = "Decoupled Hamilton-Jacobi reachability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding snapshots from earlier steps; defaults to the output directory.
    #[arg(long, global = true)]
    inputs: Option<PathBuf>,
    /// Worker threads; 1 gives byte-identical reruns.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long = "memory-budget", global = true, value_name = "BYTES")]
    memory_budget: Option<u64>,
    /// Recorded in CSV headers.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve every subsystem and write one snapshot per solve.
    Solve,
    /// Solve the full system directly on the product grid.
    SolveFull,
    /// Reconstruct the full value function on the configured slices.
    Reconstruct,
    /// Zero-level contours of reconstructed 2D slices.
    Contour,
    /// Boundary error against the dynamic-programming oracle.
    Error,
    /// Time full and decoupled solves across resolutions.
    Bench,
    /// Closed-loop simulation with the safety filter.
    Simulate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let (cfg, hash) = RunConfig::load(&path)?;
    let threads = cli.threads.or(cfg.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let out = cli.out.unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let ctx = Context {
        inputs: cli.inputs.unwrap_or_else(|| out.clone()),
        out,
        memory_budget: cli.memory_budget.or(cfg.memory_budget),
        seed: cli.seed,
        hash,
        cfg,
    };
    match cli.command {
        Command::Solve => commands::solve(&ctx),
        Command::SolveFull => commands::solve_full(&ctx),
        Command::Reconstruct => commands::reconstruct(&ctx),
        Command::Contour => commands::contour(&ctx),
        Command::Error => commands::error(&ctx),
        Command::Bench => commands::bench(&ctx),
        Command::Simulate => commands::simulate_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
