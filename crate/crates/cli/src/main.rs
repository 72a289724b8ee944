//! `spatial-psl`: dataset builds, mask inference via soft-logic matching,
//! teacher/student training runs, report tables, and raw solver runs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input error,
//! 4 non-convergence in strict mode.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::Config;
use spatial_psl_core::data::Split;

#[derive(Parser)]
#[command(name = "spatial-psl", version, about = "Spatial soft-logic matching and distillation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset (scenes, questions, rasters, manifest)
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `data.seed`
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `data.dir`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Infer per-question masks and write the matching report
    Masks {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `mask.out`
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict to one split (train, val, test)
        #[arg(long)]
        split: Option<String>,
    },
    /// Train one variant (baseline, teacher, or student)
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.out`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the accuracy table with deltas against the baseline
    Report {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve a weighted-rule program against an evidence file
    Psl {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        evidence: PathBuf,
        /// Output interpretation file (`atom value` per line, sorted)
        #[arg(long)]
        out: PathBuf,
        /// Also dump the ground program (one weighted clause per line)
        #[arg(long)]
        dump_ground: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train students over a grid of imitation parameters
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `sweep.out`
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Gen { config, seed, out } => {
            let mut cfg = Config::load(&config)?;
            if let Some(s) = seed {
                cfg.set("data.seed", s.to_string());
            }
            if let Some(o) = out {
                cfg.set("data.dir", o.display().to_string());
            }
            commands::cmd_gen(&cfg)
        }
        Cmd::Masks { config, out, split } => {
            let mut cfg = Config::load(&config)?;
            if let Some(o) = out {
                cfg.set("mask.out", o.display().to_string());
            }
            let only = match split.as_deref() {
                None => None,
                Some("train") => Some(Split::Train),
                Some("val") => Some(Split::Val),
                Some("test") => Some(Split::Test),
                Some(other) => {
                    return Err(CliError::Config(format!(
                        "--split: unknown split `{other}`"
                    )))
                }
            };
            commands::cmd_masks(&cfg, only)
        }
        Cmd::Train { config, seed, out } => {
            let mut cfg = Config::load(&config)?;
            if let Some(s) = seed {
                cfg.set("train.seed", s.to_string());
            }
            if let Some(o) = out {
                cfg.set("train.out", o.display().to_string());
            }
            commands::cmd_train(&cfg)
        }
        Cmd::Report { config } => {
            let cfg = Config::load(&config)?;
            commands::cmd_report(&cfg)
        }
        Cmd::Psl {
            program,
            evidence,
            out,
            dump_ground,
            config,
        } => {
            let cfg = match config {
                Some(p) => Some(Config::load(&p)?),
                None => None,
            };
            commands::cmd_psl(&program, &evidence, &out, dump_ground.as_deref(), cfg.as_ref())
        }
        Cmd::Sweep { config, seed, out } => {
            let mut cfg = Config::load(&config)?;
            if let Some(s) = seed {
                cfg.set("train.seed", s.to_string());
            }
            if let Some(o) = out {
                cfg.set("sweep.out", o.display().to_string());
            }
            commands::cmd_sweep(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
