//! Command-line front end: configuration, trace files and the subcommand
//! runners. The binary in `main.rs` only parses flags and maps errors to exit
//! codes.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod trace_file;

use std::path::PathBuf;

pub use commands::{run, Command, Outcome, RunOptions};
pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, clap::Parser)]
#[command(name = "coopemit", version, about = "Cooperative two-emitter photon statistics")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Suppress the summary line.
    #[arg(long)]
    pub quiet: bool,
}

/// Loads the config, applies flag overrides and runs the command.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.display().to_string();
    }
    if cli.workers == Some(0) {
        return Err(CliError::Config {
            key: "--workers".into(),
            reason: "must be at least 1".into(),
        });
    }
    let opts = RunOptions {
        out_dir: PathBuf::from(&cfg.output_dir),
        workers: cli.workers,
    };
    run(cli.command, &cfg, &opts)
}
