//! `perpetual`: batch front end for analytic moments, Monte Carlo runs and
//! Green-function checks of perpetual integral functionals.
//!
//! Exit codes: 0 success, 1 failed comparison, 2 configuration error,
//! 3 numerical or I/O failure, 4 kernel validation failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] perpetual_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use perpetual_core::Error as E;
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Core(
                E::InvalidParameter { .. } | E::DimensionMismatch { .. } | E::Divergent(_),
            ) => 2,
            CliError::Core(E::KernelValidation(_)) => 4,
            CliError::Core(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "perpetual",
    version,
    about = "Perpetual integral functionals of transient processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write the first replicates as CSV under `<out>/paths`.
    #[arg(long, global = true)]
    dump_paths: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Analytic mean and variance with error estimates.
    Analytic,
    /// Monte Carlo estimate of the truncated integral.
    Simulate,
    /// Analytic and Monte Carlo side by side; exit 1 on a failed comparison.
    Compare,
    /// Green function of a compound Poisson kernel with its series check.
    Green0,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("missing --config PATH".into()))?;
    let mut config = Config::load(&path)?;
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    config.seed = Some(config.seed());
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    if let Some(t) = config.threads {
        if t == 0 {
            return Err(CliError::Config(
                "invalid `threads`: must be at least 1".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let out = cli
        .out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let ctx = commands::Context {
        config,
        out,
        dump_paths: cli.dump_paths,
    };
    match cli.command {
        Command::Analytic => commands::analytic(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::Green0 => commands::green0(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
