//! Pipeline stages and the full sweep over setups, subset sizes and seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{ExperimentConfig, Setup};
use crate::data::{
    load_split, select, subset_order, subset_sizes, unlabeled, write_audio, write_features_for_all, write_scenes,
    DataLayout, LabeledScenario, Split,
};
use crate::error::{Error, Result};
use crate::report::{build_report, write_report, CellResult, Report};
use crate::storage::{read_json, write_atomic, write_json};
use crate::train::{evaluate, finetune, pretrain, CurvePoint, ObjectiveSettings, Trained};

/// An experiment configuration bound to its output directory.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
}

/// What pretraining leaves next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub setup: Setup,
    pub seed: u64,
    pub checkpoint_path: String,
    pub best_step: usize,
    pub best_val: f64,
    pub curve: Vec<CurvePoint>,
}

/// What finetuning leaves next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub setup: Setup,
    pub subset_exponent: u32,
    pub subset_size: usize,
    pub seed: u64,
    pub checkpoint_path: String,
    pub best_step: usize,
    pub best_val: f64,
    pub curve: Vec<CurvePoint>,
}

/// Training, validation and test scenarios held in memory.
pub struct Datasets {
    pub train: Vec<LabeledScenario>,
    pub val: Vec<LabeledScenario>,
    pub test: Vec<LabeledScenario>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn out(&self) -> &Path {
        &self.config.out
    }

    pub fn layout(&self) -> DataLayout {
        DataLayout::new(self.out())
    }

    fn settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            samples: (self.config.duration * f64::from(self.config.sample_rate)).round() as usize,
            split_epsilon: self.config.split_epsilon,
            lambda: self.config.lambda,
        }
    }

    pub fn pretrain_checkpoint(&self, setup: Setup, seed: u64) -> String {
        format!("checkpoints/pretrain-{setup}-seed{seed}.ckpt")
    }

    fn pretrain_record(&self, setup: Setup, seed: u64) -> PathBuf {
        self.out().join(format!("checkpoints/pretrain-{setup}-seed{seed}.json"))
    }

    pub fn finetune_checkpoint(&self, setup: Setup, size: usize, seed: u64) -> String {
        format!("checkpoints/finetune-{setup}-n{size}-seed{seed}.ckpt")
    }

    fn finetune_record(&self, setup: Setup, size: usize, seed: u64) -> PathBuf {
        self.out().join(format!("checkpoints/finetune-{setup}-n{size}-seed{seed}.json"))
    }

    fn cell_path(&self, setup: Setup, size: usize, seed: u64) -> PathBuf {
        self.out().join(format!("cells/{setup}-n{size}-seed{seed}.json"))
    }

    fn subset_size(&self, exponent: u32) -> Result<usize> {
        if !self.config.subset_exponents.contains(&exponent) {
            return Err(Error::Config(format!("subset exponent {exponent} is not configured")));
        }
        Ok(subset_sizes(self.config.total_scenarios, &[exponent])?[0])
    }

    pub fn gen_scenes(&self) -> Result<()> {
        write_scenes(&self.config, &self.layout())
    }

    pub fn gen_audio(&self) -> Result<()> {
        write_audio(&self.config, &self.layout())
    }

    pub fn featurize(&self) -> Result<()> {
        write_features_for_all(&self.config, &self.layout())
    }

    pub fn datasets_present(&self) -> bool {
        let layout = self.layout();
        Split::ALL.iter().all(|&s| layout.feature_manifest(s).exists())
    }

    /// Generates whatever dataset stages are missing.
    pub fn prepare_datasets(&self) -> Result<()> {
        if self.datasets_present() {
            return Ok(());
        }
        let layout = self.layout();
        if !Split::ALL.iter().all(|&s| layout.scenes(s).exists()) {
            self.gen_scenes()?;
        }
        if self.config.write_audio && !Split::ALL.iter().all(|&s| layout.audio_manifest(s).exists()) {
            self.gen_audio()?;
        }
        self.featurize()
    }

    pub fn load_datasets(&self) -> Result<Datasets> {
        let layout = self.layout();
        let d = Datasets {
            train: load_split(&layout, Split::Train)?,
            val: load_split(&layout, Split::Validation)?,
            test: load_split(&layout, Split::Test)?,
        };
        let expect = |split: Split, got: usize| {
            let want = split.size(&self.config);
            if got == want {
                Ok(())
            } else {
                Err(Error::Invalid(format!(
                    "{} split has {got} scenarios, config expects {want}; regenerate the data",
                    split.name()
                )))
            }
        };
        expect(Split::Train, d.train.len())?;
        expect(Split::Validation, d.val.len())?;
        expect(Split::Test, d.test.len())?;
        Ok(d)
    }

    pub fn run_pretrain(&self, data: &Datasets, setup: Setup, seed: u64) -> Result<PretrainRecord> {
        let cfg = &self.config;
        let outcome = pretrain(
            setup,
            &cfg.model,
            &unlabeled(&data.train),
            &unlabeled(&data.val),
            &cfg.pretrain,
            &self.settings(),
            seed,
        )?;
        let checkpoint_path = self.pretrain_checkpoint(setup, seed);
        let meta = CheckpointMeta {
            setup: setup.to_string(),
            stage: "pretrain".into(),
            seed,
            subset_size: None,
            best_step: outcome.best_step,
            best_val: outcome.best_val,
        };
        checkpoint::save(&self.out().join(&checkpoint_path), &outcome.trained, &meta)?;
        let record = PretrainRecord {
            setup,
            seed,
            checkpoint_path,
            best_step: outcome.best_step,
            best_val: outcome.best_val,
            curve: outcome.curve,
        };
        write_json(&self.pretrain_record(setup, seed), &record)?;
        Ok(record)
    }

    pub fn run_finetune(&self, data: &Datasets, setup: Setup, exponent: u32, seed: u64) -> Result<FinetuneRecord> {
        let cfg = &self.config;
        let size = self.subset_size(exponent)?;
        let order = subset_order(data.train.len(), seed);
        let subset = select(&data.train, &order, size)?;
        let val: Vec<&LabeledScenario> = data.val.iter().collect();
        let init = if setup.is_pretrained() {
            let path = self.out().join(self.pretrain_checkpoint(setup, seed));
            if !path.exists() {
                return Err(Error::Invalid(format!(
                    "{}: pretrain {setup} with seed {seed} first",
                    path.display()
                )));
            }
            Some(checkpoint::load(&path)?.0)
        } else {
            None
        };
        let outcome = finetune(init.as_ref().map(|t| &t.store), &cfg.model, &subset, &val, &cfg.finetune, seed)?;
        let checkpoint_path = self.finetune_checkpoint(setup, size, seed);
        let meta = CheckpointMeta {
            setup: setup.to_string(),
            stage: "finetune".into(),
            seed,
            subset_size: Some(size),
            best_step: outcome.best_step,
            best_val: outcome.best_val,
        };
        checkpoint::save(&self.out().join(&checkpoint_path), &outcome.trained, &meta)?;
        let record = FinetuneRecord {
            setup,
            subset_exponent: exponent,
            subset_size: size,
            seed,
            checkpoint_path,
            best_step: outcome.best_step,
            best_val: outcome.best_val,
            curve: outcome.curve,
        };
        write_json(&self.finetune_record(setup, size, seed), &record)?;
        Ok(record)
    }

    /// Evaluates a finetuned checkpoint on the test split and records the cell.
    pub fn run_evaluate(&self, data: &Datasets, setup: Setup, exponent: u32, seed: u64) -> Result<CellResult> {
        let size = self.subset_size(exponent)?;
        let ft: FinetuneRecord = read_json(&self.finetune_record(setup, size, seed))?;
        let (trained, _) = checkpoint::load(&self.out().join(&ft.checkpoint_path))?;
        let accuracy = evaluate(&trained, &data.test)?;
        let pre: Option<PretrainRecord> = if setup.is_pretrained() {
            Some(read_json(&self.pretrain_record(setup, seed))?)
        } else {
            None
        };
        let cell = CellResult {
            setup,
            subset_exponent: exponent,
            subset_size: size,
            seed,
            accuracy,
            checkpoint_path: ft.checkpoint_path,
            finetune_best_step: ft.best_step,
            finetune_curve: ft.curve,
            pretrain_best_step: pre.as_ref().map(|p| p.best_step),
            pretrain_curve: pre.map(|p| p.curve),
        };
        write_json(&self.cell_path(setup, size, seed), &cell)?;
        Ok(cell)
    }

    /// Assembles the report from every configured cell.
    pub fn report(&self) -> Result<Report> {
        let cfg = &self.config;
        let mut cells = Vec::new();
        for &setup in &cfg.setups {
            for &e in &cfg.subset_exponents {
                let size = self.subset_size(e)?;
                for &seed in &cfg.seeds {
                    let path = self.cell_path(setup, size, seed);
                    if !path.exists() {
                        if setup == Setup::Baseline {
                            return Err(Error::MissingBaseline { seed, subset_size: size });
                        }
                        return Err(Error::Invalid(format!("missing result {}", path.display())));
                    }
                    cells.push(read_json(&path)?);
                }
            }
        }
        let report = build_report(cells)?;
        write_report(self.out(), &report)?;
        Ok(report)
    }

    /// Every (setup, subset, seed) cell, then the report.
    pub fn run_sweep(&self) -> Result<Report> {
        let cfg = &self.config;
        write_atomic(&self.out().join("config.toml"), cfg.to_toml_string()?.as_bytes())?;
        self.prepare_datasets()?;
        let data = self.load_datasets()?;
        for &seed in &cfg.seeds {
            for &setup in cfg.setups.iter().filter(|s| s.is_pretrained()) {
                self.run_pretrain(&data, setup, seed)?;
            }
            for &setup in &cfg.setups {
                for &e in &cfg.subset_exponents {
                    self.run_finetune(&data, setup, e, seed)?;
                    self.run_evaluate(&data, setup, e, seed)?;
                }
            }
        }
        self.report()
    }
}

/// Loads a checkpoint from a path relative to the experiment directory.
pub fn load_checkpoint(exp: &Experiment, relative: &str) -> Result<Trained> {
    Ok(checkpoint::load(&exp.out().join(relative))?.0)
}
