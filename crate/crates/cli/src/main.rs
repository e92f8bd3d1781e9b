//! `emocap`: synthetic data, anchors, scoring, evaluation and training runs.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use config::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "emocap",
    about = "Emotion-aware caption rewards and GRPO training",
    disable_version_flag = true
)]
pub struct Cli {
    /// Print the tool version and every file format identifier
    #[arg(short = 'V', long)]
    version: bool,
    /// TOML file with config fields; flags take precedence over it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a synthetic spec into dataset, lexicon and split files
    GenSynth {
        /// Spec file; the bundled six-emotion spec when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Embed every lexicon and write the anchor snapshot
    BuildAnchors {
        #[arg(long)]
        lexicons: PathBuf,
    },
    /// Composite reward of generated captions against references, line by line
    Score {
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        references: PathBuf,
    },
    /// Caption metrics for a hypothesis file or a decoded checkpoint
    Evaluate {
        /// One hypothesis per line
        #[arg(long, conflicts_with = "checkpoint")]
        hyps: Option<PathBuf>,
        /// Policy to decode; needs --dataset
        #[arg(long, required_unless_present = "hyps")]
        checkpoint: Option<PathBuf>,
        /// One reference per line
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        refs: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Split manifest; selects `eval.subset` of the dataset
        #[arg(long, requires = "dataset")]
        split: Option<PathBuf>,
        /// Anchor snapshot; adds reward statistics for a checkpoint
        #[arg(long, requires = "checkpoint")]
        anchors: Option<PathBuf>,
    },
    /// Supervised fine-tuning of the tabular policy
    TrainSft {
        #[arg(long)]
        dataset: PathBuf,
        /// Split manifest; training uses its train ids
        #[arg(long)]
        split: Option<PathBuf>,
        /// Starting checkpoint; uniform over the dataset vocabulary when omitted
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// GRPO with the composite reward, regularised towards the input checkpoint
    TrainGrpo {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Supervised checkpoint; also the frozen KL reference
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
    },
    /// Re-execute a manifest into --out-dir and compare output hashes
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&args);
    if cli.version {
        println!("emocap {}", env!("CARGO_PKG_VERSION"));
        for (name, id) in emocap_core::formats::all() {
            println!("  {name}: {id}");
        }
        return ExitCode::SUCCESS;
    }
    if cli.command.is_none() {
        let _ = Cli::command().print_help();
        return ExitCode::from(2);
    }
    match commands::run(cli, &args[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
