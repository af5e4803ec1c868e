//! Command-line driver for `fpg-core`: bandit landscapes, training grids,
//! constant reports and environment export. Outputs are CSV/JSON only.

// `!(x > 0.0)` rejects NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::Config;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "fpg", version, about = "f-softargmax policy gradient experiments")]
pub struct Cli {
    /// JSON config file; defaults apply to missing keys.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Override a top-level config key, e.g. `--set lambda=[0.1,1]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Stochastic,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Value and gradient norm over a logit grid of a two-armed bandit (CSV).
    Landscape {
        /// Output file; stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run the configured grid of training runs.
    Train {
        /// Maximum number of concurrent runs.
        #[arg(long, short, default_value_t = default_jobs())]
        jobs: usize,
        /// Shorthand for `--set mode=...`.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Theory constants and the recommended schedule (JSON).
    Constants {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Dump the configured environment as MDP JSON.
    Env {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| CliError::io("stdout", e))
        }
    }
}

/// Executes a parsed command line. `seed_env` is the value of [`config::SEED_ENV`], if set.
pub fn run(cli: Cli, seed_env: Option<&str>) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Cmd::Train { mode: Some(m), .. } = &cli.command {
        let m = match m {
            ModeArg::Exact => "exact",
            ModeArg::Stochastic => "stochastic",
        };
        overrides.push(format!("mode=\"{m}\""));
    }
    let cfg = Config::load(cli.config.as_deref(), &overrides, seed_env)?;
    match &cli.command {
        Cmd::Landscape { out } => match out {
            Some(p) => {
                let f = std::fs::File::create(p).map_err(|e| CliError::io(p, e))?;
                commands::cmd_landscape(&cfg, std::io::BufWriter::new(f))?;
            }
            None => {
                commands::cmd_landscape(&cfg, std::io::stdout().lock())?;
            }
        },
        Cmd::Train { jobs, .. } => {
            let out = commands::cmd_train(&cfg, *jobs)?;
            for c in &out.summary.cells {
                let se = c.final_return_se.map_or("n/a".to_string(), |s| format!("{s:.4}"));
                eprintln!(
                    "{}: final return {:.4} ± {se} over {} runs",
                    c.cell, c.final_return_mean, c.runs
                );
            }
            eprintln!("wrote {}", out.dir.join("summary.json").display());
        }
        Cmd::Constants { out } => {
            let report = commands::cmd_constants(&cfg)?;
            emit(out.as_ref(), &serde_json::to_string_pretty(&report)?)?;
        }
        Cmd::Env { out } => {
            let env = commands::cmd_env(&cfg)?;
            for note in &env.notes {
                eprintln!("{}: {note}", env.name);
            }
            emit(out.as_ref(), &env.mdp.to_json())?;
        }
    }
    Ok(())
}
