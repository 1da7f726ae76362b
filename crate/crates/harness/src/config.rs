use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use arbiter_core::nn::{AdamConfig, ModelConfig};
use arbiter_core::objectives::DEFAULT_EPSILON;
use arbiter_core::rir::RirOptions;
use arbiter_core::scene::SamplingConfig;
use arbiter_core::synth::{DEFAULT_DURATION, DEFAULT_SAMPLE_RATE};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    /// Encoder and classifier trained from scratch on the labelled subset.
    Baseline,
    Contrastive,
    Reconstructive,
    /// Weighted sum of the reconstructive and contrastive objectives.
    Combo,
}

impl Setup {
    pub const ALL: [Setup; 4] = [Setup::Baseline, Setup::Contrastive, Setup::Reconstructive, Setup::Combo];

    pub fn name(self) -> &'static str {
        match self {
            Setup::Baseline => "baseline",
            Setup::Contrastive => "contrastive",
            Setup::Reconstructive => "reconstructive",
            Setup::Combo => "combo",
        }
    }

    pub fn is_pretrained(self) -> bool {
        self != Setup::Baseline
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setup::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown setup {s:?}; expected one of baseline, contrastive, reconstructive, combo")))
    }
}

/// How rendered recordings are written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioLayout {
    /// One mono float WAV per device.
    PerDevice,
    /// One multi-channel float WAV per scenario, a channel per device.
    Packed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Scenarios whose gradients are accumulated into one update.
    pub batch_size: usize,
    /// Validate (and possibly checkpoint) every this many steps.
    pub checkpoint_interval: usize,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            checkpoint_interval: 50,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self, what: &str) -> Result<()> {
        if self.batch_size == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config(format!("{what}: batch_size and checkpoint_interval must be positive")));
        }
        let o = &self.optimizer;
        let ok = o.lr > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && o.weight_decay >= 0.0
            && o.clip_norm >= 0.0
            && (0.0..=1.0).contains(&o.min_lr_fraction);
        if !ok {
            return Err(Error::Config(format!("{what}: invalid optimizer settings {o:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed for scene sampling; every scenario seed derives from it.
    pub dataset_seed: u64,
    /// Size of the training pool (S).
    pub total_scenarios: usize,
    /// Validation scenarios, as a fraction of S, drawn from their own seed stream.
    pub validation_fraction: f64,
    pub test_scenarios: usize,
    pub subset_exponents: Vec<u32>,
    pub setups: Vec<Setup>,
    pub seeds: Vec<u64>,
    pub sample_rate: u32,
    pub duration: f64,
    pub sampling: SamplingConfig,
    pub rir: RirOptions,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Jitter of the contrastive split point, as a fraction of the recording.
    pub split_epsilon: f64,
    /// Weight of the reconstructive term in the combo objective.
    pub lambda: f64,
    /// Write rendered audio (otherwise features are computed in memory).
    pub write_audio: bool,
    pub audio_layout: AudioLayout,
    /// Directory for cached impulse responses; none disables the cache.
    pub rir_cache: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_seed: 0,
            total_scenarios: 2000,
            validation_fraction: 0.1,
            test_scenarios: 500,
            subset_exponents: vec![0, 1, 2, 3],
            setups: Setup::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration: DEFAULT_DURATION,
            sampling: SamplingConfig::default(),
            rir: RirOptions::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
            split_epsilon: DEFAULT_EPSILON,
            lambda: 0.5,
            write_audio: true,
            audio_layout: AudioLayout::PerDevice,
            rir_cache: None,
            out: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validation_scenarios(&self) -> usize {
        (self.validation_fraction * self.total_scenarios as f64).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_scenarios == 0 {
            return Err(Error::Config("total_scenarios must be positive".into()));
        }
        if self.subset_exponents.is_empty() {
            return Err(Error::Config("subset_exponents is empty".into()));
        }
        let max_exp = *self.subset_exponents.iter().max().expect("nonempty");
        let need = 4usize.checked_pow(max_exp);
        if need.is_none_or(|n| self.total_scenarios < n) {
            return Err(Error::Config(format!(
                "total_scenarios {} is smaller than 4^{max_exp}",
                self.total_scenarios
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside (0, 0.5]",
                self.validation_fraction
            )));
        }
        if self.test_scenarios == 0 {
            return Err(Error::Config("test_scenarios must be positive".into()));
        }
        if self.setups.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("setups and seeds must be nonempty".into()));
        }
        if !self.setups.contains(&Setup::Baseline) {
            return Err(Error::Config("the baseline setup is required for relative error rates".into()));
        }
        if self.sample_rate != arbiter_core::features::SAMPLE_RATE {
            return Err(Error::Config(format!(
                "features are defined at {} Hz, got sample_rate {}",
                arbiter_core::features::SAMPLE_RATE,
                self.sample_rate
            )));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config("duration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(0.0..0.5).contains(&self.split_epsilon) {
            return Err(Error::Config(format!("split_epsilon {} outside [0, 0.5)", self.split_epsilon)));
        }
        self.sampling.validate()?;
        self.model.validate()?;
        self.pretrain.validate("pretrain")?;
        self.finetune.validate("finetune")?;
        Ok(())
    }
}
