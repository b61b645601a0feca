//! `complaint`: dataset generation, training, evaluation, prediction,
//! ablations and gradient checks.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data or format
//! error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod failure;

use config::RunConfig;
use failure::Failure;

#[derive(Parser)]
#[command(name = "complaint", version, about = "Aspect-level complaint classification from chunked video embeddings")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every configurable command. Flags override values from
/// the config file; `--set` overrides any key.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Dataset manifest (`paths.manifest`).
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Output directory (`paths.out_dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Checkpoint to read (`paths.checkpoint`).
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Seed (`synth.seed` for gen-synthetic, `train.seed` otherwise).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (embedding files + manifest.json) to --out.
    GenSynthetic(ConfigArgs),
    /// Train on the manifest's train split; writes config.echo, checkpoint,
    /// loss.csv and, when a test split exists, report.csv and preds.jsonl.
    Train(ConfigArgs),
    /// Score a checkpoint on one manifest split; writes report.csv and
    /// preds.jsonl.
    Evaluate {
        #[command(flatten)]
        args: ConfigArgs,
        /// Split to score: train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print the decoded aspect/complaint listing for one embedding file.
    Predict {
        #[command(flatten)]
        args: ConfigArgs,
        /// MCEB embedding file.
        embedding: PathBuf,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Train and score every configured variant for every seed in
    /// `ablate.seeds`; writes report.csv (per condition) and runs.csv.
    Ablate(ConfigArgs),
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        /// Classifier blocks.
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        /// Sequence length of the probe inputs.
        #[arg(long, default_value_t = 3)]
        chunks: usize,
        /// Architecture variant.
        #[arg(long, default_value = "multimodal")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

impl ConfigArgs {
    fn resolve(&self, seed_key: &str) -> Result<RunConfig, Failure> {
        let mut overrides = Vec::new();
        let path = |k: &str, p: &Option<PathBuf>| {
            p.as_ref().map(|p| format!("{k}={}", toml::Value::String(p.display().to_string())))
        };
        overrides.extend(path("paths.manifest", &self.manifest));
        overrides.extend(path("paths.out_dir", &self.out));
        overrides.extend(path("paths.checkpoint", &self.checkpoint));
        overrides.extend(self.seed.map(|s| format!("{seed_key}={s}")));
        // explicit --set wins over the named shorthands
        overrides.extend(self.set.iter().cloned());
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(&a.resolve("synth.seed")?),
        Command::Train(a) => commands::train(&a.resolve("train.seed")?),
        Command::Evaluate { args, split } => commands::evaluate(&args.resolve("train.seed")?, &split),
        Command::Predict { args, embedding, json } => {
            commands::predict(&args.resolve("train.seed")?, &embedding, json)
        }
        Command::Ablate(a) => commands::ablate(&a.resolve("train.seed")?),
        Command::Gradcheck {
            dim,
            heads,
            blocks,
            chunks,
            variant,
            seed,
        } => commands::gradcheck(dim, heads, blocks, chunks, &variant, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
