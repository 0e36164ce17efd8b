//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ReconConfig;
use crate::error::AppResult;
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(name = "promptmr", version, about = "Two-stage prompt-conditioned accelerated MRI reconstruction")]
pub struct Cli {
    /// YAML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key.path=value` config override; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test phantom cases and the split manifest.
    Simulate,
    /// Train Stage I (unrolled reconstruction).
    TrainStage1 {
        /// Continue from the saved training state.
        #[arg(long)]
        resume: bool,
    },
    /// Train Stage II (refinement) on frozen Stage-I outputs.
    TrainStage2 {
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// Reconstruct cases with both stages.
    Reconstruct {
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[arg(long)]
        stage2: Option<PathBuf>,
        /// Case container directories; default is the test split.
        #[arg(long = "case")]
        cases: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score reconstructions and write the CSV report and table.
    Evaluate {
        /// Directory of reconstruction containers.
        #[arg(long)]
        recon: Option<PathBuf>,
    },
    /// Export per-frame prompt weights of a Stage-I checkpoint.
    ExportPrompts {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

pub fn run(cli: &Cli) -> AppResult<()> {
    let cfg = ReconConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match &cli.command {
        Command::Simulate => {
            pipeline::cmd_simulate(&cfg)?;
        }
        Command::TrainStage1 { resume } => {
            let p = pipeline::cmd_train_stage1(&cfg, *resume)?;
            println!("{}", p.display());
        }
        Command::TrainStage2 { stage1, resume } => {
            let p = pipeline::cmd_train_stage2(&cfg, stage1.as_deref(), *resume)?;
            println!("{}", p.display());
        }
        Command::Reconstruct { stage1, stage2, cases, out } => {
            let written = pipeline::cmd_reconstruct(&cfg, stage1.as_deref(), stage2.as_deref(), cases, out.as_deref())?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Evaluate { recon } => {
            pipeline::cmd_evaluate(&cfg, recon.as_deref())?;
        }
        Command::ExportPrompts { checkpoint } => {
            let p = pipeline::cmd_export_prompts(&cfg, checkpoint.as_deref())?;
            println!("{}", p.display());
        }
    }
    Ok(())
}
