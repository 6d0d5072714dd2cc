//! `lncouple` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lncouple::kernel::KernelProfile;

use crate::commands::CommandError;
use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "lncouple", version, about = "Coupled local/nonlocal diffusion solver")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one configured problem and write the solution and its errors.
    Solve,
    /// Sweep the configured horizons and fit convergence rates.
    Convergence,
    /// Run the resolution guard and the acceptance suite.
    Verify,
    /// Print kernel normalization and profile checks.
    KernelInfo {
        /// Profile name; defaults to the configured profile.
        #[arg(long)]
        profile: Option<String>,
        /// Spatial dimension (1 or 2).
        #[arg(long, default_value_t = 1)]
        dim: usize,
    },
}

fn run(cli: Cli) -> Result<bool, CommandError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError::Invalid(format!("cannot start {n} threads: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    match cli.command {
        Command::Solve => commands::solve(&cfg, &cfg.output.dir).map(|_| true),
        Command::Convergence => commands::convergence(&cfg, &cfg.output.dir).map(|_| true),
        Command::Verify => commands::verify(&cfg),
        Command::KernelInfo { profile, dim } => {
            let profile = match profile {
                Some(name) => {
                    KernelProfile::by_name(&name).map_err(|e| CommandError::Config(ConfigError::Invalid(e.to_string())))?
                }
                None => cfg.profile()?,
            };
            commands::kernel_info(&profile, dim).map(|_| true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
