mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Overrides};

/// Few-shot flower classification experiments: MAML and a transfer-learning baseline.
#[derive(Parser)]
#[command(name = "fewshot", version)]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Class-per-directory image tree to use instead of the configured dataset.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic flower dataset as a PNG tree into the output directory.
    GenSynth,
    /// Write augmented copies of the dataset as a PNG tree into the output directory.
    Augment,
    /// Meta-train the episode classifier.
    TrainMaml {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Pretrain a backbone and fit the classification head.
    TrainTransfer,
    /// Sweep transfer head configurations and select by validation accuracy.
    Grid,
    /// Evaluate a MAML or transfer checkpoint and write a report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["test", "val"])]
        split: String,
    },
    /// Re-render plots and summarize reports found in the output directory.
    Report,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let over = Overrides {
        seed: cli.seed,
        out: cli.out,
        data: cli.data,
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &over)?;
    match cli.command {
        Command::GenSynth => commands::gen_synth(&cfg),
        Command::Augment => commands::augment(&cfg),
        Command::TrainMaml { resume } => commands::train_maml(&cfg, resume),
        Command::TrainTransfer => commands::train_transfer(&cfg),
        Command::Grid => commands::grid(&cfg),
        Command::Eval { checkpoint, split } => commands::eval(&cfg, &checkpoint, &split),
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
