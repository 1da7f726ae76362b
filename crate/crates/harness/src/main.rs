use std::path::PathBuf;
use std::process::ExitCode;

use arbiter::{with_workers, Error, Experiment, ExperimentConfig, Result, Setup};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

/// Multi-device arbitration experiments: simulate scenes, pretrain, finetune, report.
///
/// Set ARBITER_WORKERS to limit the worker threads used for data generation.
#[derive(Debug, Parser)]
#[command(name = "arbiter", version)]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset seed for the generation stages; run seed for training stages
    /// (restricts the sweep to that seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Setup: baseline, contrastive, reconstructive or combo.
    #[arg(long, global = true)]
    setup: Option<Setup>,
    /// Subset exponent i; the subset holds floor(S / 4^i) scenarios.
    #[arg(long = "subset-exp", global = true)]
    subset_exp: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample scene manifests for the train, validation and test splits.
    GenScenes,
    /// Render per-device recordings to WAV files.
    GenAudio,
    /// Compute LFBE features (from audio when present, else rendered in memory).
    Featurize,
    /// Pretrain an encoder with a self-supervised objective.
    Pretrain,
    /// Finetune encoder and classifier on a labelled subset.
    Finetune,
    /// Evaluate a finetuned checkpoint on the test split.
    Evaluate,
    /// Assemble CSV, JSON and SVG reports from evaluated cells.
    Report,
    /// Run every stage for every configured cell.
    Sweep,
}

fn required<T>(v: Option<T>, flag: &str, cmd: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("{cmd} needs --{flag}")))
}

fn run(cli: Cli) -> Result<Value> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    let generation = matches!(cli.command, Command::GenScenes | Command::GenAudio | Command::Featurize);
    if generation {
        if let Some(seed) = cli.seed {
            config.dataset_seed = seed;
        }
    }
    if let Command::Sweep = cli.command {
        if let Some(seed) = cli.seed {
            config.seeds = vec![seed];
        }
        if let Some(setup) = cli.setup {
            config.setups = if setup == Setup::Baseline {
                vec![Setup::Baseline]
            } else {
                vec![Setup::Baseline, setup]
            };
        }
        if let Some(e) = cli.subset_exp {
            config.subset_exponents = vec![e];
        }
    }
    let exp = Experiment::new(config)?;
    let out = exp.out().display().to_string();
    let name = format!("{:?}", cli.command);
    let detail = match cli.command {
        Command::GenScenes => {
            exp.gen_scenes()?;
            json!({})
        }
        Command::GenAudio => {
            exp.gen_audio()?;
            json!({})
        }
        Command::Featurize => {
            exp.featurize()?;
            json!({})
        }
        Command::Pretrain => {
            let setup = required(cli.setup, "setup", "pretrain")?;
            let seed = required(cli.seed, "seed", "pretrain")?;
            let data = exp.load_datasets()?;
            let r = exp.run_pretrain(&data, setup, seed)?;
            json!({"checkpoint": r.checkpoint_path, "best_step": r.best_step, "best_val": r.best_val})
        }
        Command::Finetune => {
            let setup = required(cli.setup, "setup", "finetune")?;
            let seed = required(cli.seed, "seed", "finetune")?;
            let e = required(cli.subset_exp, "subset-exp", "finetune")?;
            let data = exp.load_datasets()?;
            let r = exp.run_finetune(&data, setup, e, seed)?;
            json!({"checkpoint": r.checkpoint_path, "subset_size": r.subset_size, "best_step": r.best_step})
        }
        Command::Evaluate => {
            let setup = required(cli.setup, "setup", "evaluate")?;
            let seed = required(cli.seed, "seed", "evaluate")?;
            let e = required(cli.subset_exp, "subset-exp", "evaluate")?;
            let data = exp.load_datasets()?;
            let c = exp.run_evaluate(&data, setup, e, seed)?;
            json!({"accuracy": c.accuracy, "subset_size": c.subset_size})
        }
        Command::Report => {
            let r = exp.report()?;
            json!({"cells": r.cells.len(), "summary": r.summary})
        }
        Command::Sweep => {
            let r = exp.run_sweep()?;
            json!({"cells": r.cells.len(), "summary": r.summary})
        }
    };
    Ok(json!({"status": "ok", "command": name, "out": out, "result": detail}))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_workers(|| run(cli)).and_then(|r| r) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"status": "error", "kind": e.kind(), "error": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
