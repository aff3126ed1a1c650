use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use srank_core::dataset::FeatureSelection;
use srank_core::pipeline::{Command, ExperimentConfig, Overrides, Pipeline};

/// Session-personalized search ranking experiments.
#[derive(Parser)]
#[command(name = "srank", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic catalog, sessions and ground truth.
    Simulate(Flags),
    /// Extract embedding-week phrases and the vocabulary.
    Phrases(Flags),
    /// Train skip-gram item embeddings.
    Embed(Flags),
    /// Build full and high-coverage ranking datasets.
    BuildData(Flags),
    /// Train one LambdaMART model per variant and dataset.
    Train(Flags),
    /// Score test splits and bootstrap the MRR.
    Evaluate(Flags),
    /// Retrain embeddings and models at each sweep dimension.
    SweepDims(Flags),
    /// Write report.json and report.txt.
    Report(Flags),
    /// Run every stage in order.
    All(Flags),
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Restrict training and evaluation to one model variant.
    #[arg(long)]
    variant: Option<FeatureSelection>,
    #[arg(long)]
    workdir: Option<PathBuf>,
}

impl Cmd {
    fn split(self) -> (Command, Flags) {
        match self {
            Cmd::Simulate(f) => (Command::Simulate, f),
            Cmd::Phrases(f) => (Command::Phrases, f),
            Cmd::Embed(f) => (Command::Embed, f),
            Cmd::BuildData(f) => (Command::BuildData, f),
            Cmd::Train(f) => (Command::Train, f),
            Cmd::Evaluate(f) => (Command::Evaluate, f),
            Cmd::SweepDims(f) => (Command::SweepDims, f),
            Cmd::Report(f) => (Command::Report, f),
            Cmd::All(f) => (Command::All, f),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (command, flags) = cli.command.split();
    let mut cfg = ExperimentConfig::load(&flags.config)?;
    cfg.apply(&Overrides {
        seed: flags.seed,
        workers: flags.workers,
        dim: flags.dim,
        variant: flags.variant,
        workdir: flags.workdir,
    })?;
    let mut pipeline = Pipeline::new(cfg)?;
    pipeline
        .run(command)
        .with_context(|| format!("{} failed", command.as_str()))?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cause: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("srank: {}", cause.join(": "));
            ExitCode::FAILURE
        }
    }
}
