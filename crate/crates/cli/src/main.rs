//! `ddsg`: sparse grid approximation, IRBC solves, decomposition analysis and
//! kernel benchmarks from one TOML configuration.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical or I/O failure.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Numerical(_) | Self::Io(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ddsg", version, about = "Dimension-decomposed adaptive sparse grids")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads (overrides `runtime.workers`).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Seed for every sampler (overrides `seed`).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Approximate a test function with a sparse grid and a DDSG and compare them.
    Approx,
    /// Solve the IRBC model by time iteration.
    Solve,
    /// Measure η and ρ of every component on one instrumented step.
    Analyze,
    /// Time naive against vectorized DDSG evaluation.
    Bench,
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_overrides(cli.workers, cli.seed);
    cfg.validate()?;
    let rt = cfg.runtime()?;
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::io(&cli.out, e))?;
    let hash = cfg.hash();
    match cli.command {
        Command::Approx => commands::approx(&cfg, &rt, &cli.out, &hash),
        Command::Solve => commands::solve(&cfg, &rt, &cli.out, &hash),
        Command::Analyze => commands::analyze(&cfg, &rt, &cli.out, &hash),
        Command::Bench => commands::bench(&cfg, &rt, &cli.out, &hash),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ddsg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
