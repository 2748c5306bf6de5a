//! Config-driven command line: `gen-data`, `extract`, `eval`, `analyze`, `report`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
pub use commands::CommandOutput;
pub use config::{Mode, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "avsteer", version, about = "Adaptive vector steering toolkit")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark and its manifest.
    GenData,
    /// Extract a steering vector from one instance against silence.
    Extract {
        #[arg(long)]
        instance: String,
        /// Output path (default: <output-dir>/vector.json).
        #[arg(long)]
        vector: Option<PathBuf>,
    },
    /// Evaluate the model with no, uniform, or adaptive steering.
    Eval {
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        vector: Option<PathBuf>,
    },
    /// Per-layer cosine / Cohen's d analysis of labeled traces.
    Analyze {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        vector: PathBuf,
        #[arg(long)]
        propose_partition: bool,
    },
    /// Score an external prediction file.
    Report {
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        config::parse_mode(s)
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(0, "avsteer-out"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed invocation; the caller prints warnings and errors.
pub fn run(cli: &Cli) -> Result<CommandOutput> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GenData => commands::cmd_gen_data(&cfg),
        Command::Extract { instance, vector } => {
            commands::cmd_extract(&cfg, instance, vector.as_deref())
        }
        Command::Eval { mode, vector } => {
            commands::cmd_eval(&cfg, mode.unwrap_or(cfg.schedule.mode), vector.as_deref())
        }
        Command::Analyze {
            traces,
            vector,
            propose_partition,
        } => commands::cmd_analyze(&cfg, traces, vector, *propose_partition).map(|(out, _)| out),
        Command::Report { predictions } => {
            commands::cmd_report(&cfg, predictions.as_deref()).map(|(out, _)| out)
        }
    }
}
