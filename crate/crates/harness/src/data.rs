//! Dataset splits, scenario generation, featurisation and nested subsets.

use std::path::{Path, PathBuf};

use arbiter_core::features::{lfbe, FeatureMatrix};
use arbiter_core::rir::RoomImpulseResponse;
use arbiter_core::scene::{sample_scene, Point, SceneSpec};
use arbiter_core::synth::{render_scene, IsmRirProvider, RenderOptions, RirProvider, Waveform};
use arbiter_core::{derive_seed, rng_from_seed};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AudioLayout, ExperimentConfig};
use crate::error::{Error, Result};
use crate::storage::{
    read_features, read_jsonl, read_wav_channels, read_wav_mono, write_features, write_jsonl, write_wav_mono,
    write_wav_packed, CachedRirProvider,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }

    /// Seed-stream tag; each split draws scenario seeds from its own stream.
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0x5452_4149_4e00,
            Split::Validation => 0x5641_4c00,
            Split::Test => 0x5445_5354,
        }
    }

    pub fn size(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Split::Train => cfg.total_scenarios,
            Split::Validation => cfg.validation_scenarios(),
            Split::Test => cfg.test_scenarios,
        }
    }
}

pub fn scenario_seed(dataset_seed: u64, split: Split, index: usize) -> u64 {
    derive_seed(derive_seed(dataset_seed, split.tag()), index as u64)
}

/// File locations of one experiment's datasets.
#[derive(Debug, Clone)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(out: &Path) -> Self {
        Self { root: out.join("data") }
    }

    pub fn split_dir(&self, split: Split) -> PathBuf {
        self.root.join(split.name())
    }

    pub fn scenes(&self, split: Split) -> PathBuf {
        self.split_dir(split).join("scenes.jsonl")
    }

    pub fn audio_manifest(&self, split: Split) -> PathBuf {
        self.split_dir(split).join("audio.jsonl")
    }

    pub fn feature_manifest(&self, split: Split) -> PathBuf {
        self.split_dir(split).join("features.jsonl")
    }
}

/// One line of a scene manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub index: usize,
    pub scene: SceneSpec,
}

/// One line of an audio manifest; paths are relative to the split directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRecord {
    pub index: usize,
    pub scene: SceneSpec,
    pub label: usize,
    pub layout: AudioLayout,
    pub audio: Vec<String>,
}

/// One line of a feature manifest; the path is relative to the split directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub index: usize,
    pub seed: u64,
    pub label: usize,
    pub devices: usize,
    pub frames: usize,
    pub path: String,
}

/// A scenario's unnormalised per-device features with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScenario {
    pub index: usize,
    pub seed: u64,
    pub label: usize,
    pub features: Vec<FeatureMatrix>,
}

/// A scenario as seen by pretraining: features only. Having no label field
/// makes it impossible for the pretraining objectives to read one.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledScenario<'a> {
    pub seed: u64,
    pub features: &'a [FeatureMatrix],
}

impl LabeledScenario {
    pub fn unlabeled(&self) -> UnlabeledScenario<'_> {
        UnlabeledScenario {
            seed: self.seed,
            features: &self.features,
        }
    }

    pub fn num_devices(&self) -> usize {
        self.features.len()
    }
}

pub fn unlabeled(items: &[LabeledScenario]) -> Vec<UnlabeledScenario<'_>> {
    items.iter().map(LabeledScenario::unlabeled).collect()
}

/// Impulse responses straight from the simulator or through the disk cache.
#[derive(Debug, Clone)]
pub enum Provider {
    Direct(IsmRirProvider),
    Cached(CachedRirProvider),
}

impl Provider {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        match &cfg.rir_cache {
            Some(dir) => Provider::Cached(CachedRirProvider::new(dir, cfg.sample_rate, cfg.rir)),
            None => Provider::Direct(IsmRirProvider {
                sample_rate: cfg.sample_rate,
                options: cfg.rir,
            }),
        }
    }
}

impl RirProvider for Provider {
    fn rir(&self, scene: &SceneSpec, source: &Point, mic: &Point) -> arbiter_core::Result<RoomImpulseResponse> {
        match self {
            Provider::Direct(p) => p.rir(scene, source, mic),
            Provider::Cached(p) => p.rir(scene, source, mic),
        }
    }
}

pub fn generate_scenes(cfg: &ExperimentConfig, split: Split) -> Result<Vec<SceneSpec>> {
    (0..split.size(cfg))
        .into_par_iter()
        .map(|i| Ok(sample_scene(&cfg.sampling, scenario_seed(cfg.dataset_seed, split, i))?))
        .collect()
}

/// Device recordings rounded to `f32`, the precision they are stored at.
pub fn render_recordings(cfg: &ExperimentConfig, scene: &SceneSpec, provider: &Provider) -> Result<Vec<Waveform>> {
    let opts = RenderOptions { duration: cfg.duration };
    let sc = render_scene(scene, provider, &opts, cfg.sample_rate)?;
    Ok(sc
        .device_waveforms
        .into_iter()
        .map(|mut w| {
            w.samples.iter_mut().for_each(|v| *v = f64::from(*v as f32));
            w
        })
        .collect())
}

pub fn featurize_recordings(recordings: &[Waveform]) -> Result<Vec<FeatureMatrix>> {
    Ok(recordings.iter().map(lfbe).collect::<arbiter_core::Result<_>>()?)
}

pub fn write_scenes(cfg: &ExperimentConfig, layout: &DataLayout) -> Result<()> {
    for split in Split::ALL {
        let records: Vec<SceneRecord> = generate_scenes(cfg, split)?
            .into_iter()
            .enumerate()
            .map(|(index, scene)| SceneRecord { index, scene })
            .collect();
        write_jsonl(&layout.scenes(split), &records)?;
    }
    Ok(())
}

fn audio_names(index: usize, devices: usize, layout: AudioLayout) -> Vec<String> {
    match layout {
        AudioLayout::PerDevice => (0..devices).map(|d| format!("audio/{index:05}_d{d:02}.wav")).collect(),
        AudioLayout::Packed => vec![format!("audio/{index:05}.wav")],
    }
}

pub fn write_audio(cfg: &ExperimentConfig, layout: &DataLayout) -> Result<()> {
    let provider = Provider::from_config(cfg);
    for split in Split::ALL {
        let dir = layout.split_dir(split);
        let scenes: Vec<SceneRecord> = read_jsonl(&layout.scenes(split))?;
        let records = scenes
            .par_iter()
            .map(|r| {
                let recs = render_recordings(cfg, &r.scene, &provider)?;
                let audio = audio_names(r.index, recs.len(), cfg.audio_layout);
                match cfg.audio_layout {
                    AudioLayout::PerDevice => {
                        for (w, name) in recs.iter().zip(&audio) {
                            write_wav_mono(&dir.join(name), w)?;
                        }
                    }
                    AudioLayout::Packed => write_wav_packed(&dir.join(&audio[0]), &recs)?,
                }
                Ok(AudioRecord {
                    index: r.index,
                    scene: r.scene.clone(),
                    label: r.scene.label,
                    layout: cfg.audio_layout,
                    audio,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_jsonl(&layout.audio_manifest(split), &records)?;
    }
    Ok(())
}

/// Reads a scenario's recordings back from an audio manifest line.
pub fn read_recordings(split_dir: &Path, record: &AudioRecord) -> Result<Vec<Waveform>> {
    let recs = match record.layout {
        AudioLayout::PerDevice => record
            .audio
            .iter()
            .map(|p| read_wav_mono(&split_dir.join(p)))
            .collect::<Result<Vec<_>>>()?,
        AudioLayout::Packed => {
            let [path] = record.audio.as_slice() else {
                return Err(Error::Invalid(format!("scenario {}: packed audio needs one file", record.index)));
            };
            read_wav_channels(&split_dir.join(path))?
        }
    };
    if recs.len() != record.scene.num_devices() {
        return Err(Error::Invalid(format!(
            "scenario {}: {} recordings for {} devices",
            record.index,
            recs.len(),
            record.scene.num_devices()
        )));
    }
    Ok(recs)
}

/// Computes features for every split, from the audio manifest when one
/// exists and otherwise by rendering the scenes in memory.
pub fn write_features_for_all(cfg: &ExperimentConfig, layout: &DataLayout) -> Result<()> {
    let provider = Provider::from_config(cfg);
    for split in Split::ALL {
        let dir = layout.split_dir(split);
        let audio_manifest = layout.audio_manifest(split);
        let jobs: Vec<(usize, SceneSpec, Option<AudioRecord>)> = if audio_manifest.exists() {
            read_jsonl::<AudioRecord>(&audio_manifest)?
                .into_iter()
                .map(|r| (r.index, r.scene.clone(), Some(r)))
                .collect()
        } else {
            read_jsonl::<SceneRecord>(&layout.scenes(split))?
                .into_iter()
                .map(|r| (r.index, r.scene, None))
                .collect()
        };
        let records = jobs
            .par_iter()
            .map(|(index, scene, audio)| {
                let recs = match audio {
                    Some(a) => read_recordings(&dir, a)?,
                    None => render_recordings(cfg, scene, &provider)?,
                };
                let feats = featurize_recordings(&recs)?;
                let path = format!("features/{index:05}.lfbe");
                write_features(&dir.join(&path), &feats)?;
                Ok(FeatureRecord {
                    index: *index,
                    seed: scene.seed,
                    label: scene.label,
                    devices: feats.len(),
                    frames: feats.first().map_or(0, |f| f.frames),
                    path,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_jsonl(&layout.feature_manifest(split), &records)?;
    }
    Ok(())
}

pub fn load_split(layout: &DataLayout, split: Split) -> Result<Vec<LabeledScenario>> {
    let dir = layout.split_dir(split);
    let records: Vec<FeatureRecord> = read_jsonl(&layout.feature_manifest(split))?;
    records
        .par_iter()
        .map(|r| {
            let features = read_features(&dir.join(&r.path))?;
            if features.len() != r.devices || r.label >= r.devices {
                return Err(Error::Invalid(format!(
                    "{}: scenario {} has {} feature matrices, label {}, manifest says {} devices",
                    split.name(),
                    r.index,
                    features.len(),
                    r.label,
                    r.devices
                )));
            }
            Ok(LabeledScenario {
                index: r.index,
                seed: r.seed,
                label: r.label,
                features,
            })
        })
        .collect()
}

/// `floor(total / 4^i)` for each exponent.
pub fn subset_sizes(total: usize, exponents: &[u32]) -> Result<Vec<usize>> {
    if total == 0 {
        return Err(Error::Invalid("cannot take subsets of an empty pool".into()));
    }
    exponents
        .iter()
        .map(|&e| {
            let size = 4usize.checked_pow(e).map_or(0, |d| total / d);
            if size == 0 {
                return Err(Error::Invalid(format!("subset {total}/4^{e} is empty")));
            }
            Ok(size)
        })
        .collect()
}

/// A seeded permutation of the pool. Subsets are its prefixes, so every
/// smaller subset is contained in every larger one.
pub fn subset_order(total: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, 0x5355_4253_4554)));
    order
}

pub fn select<'a>(pool: &'a [LabeledScenario], order: &[usize], size: usize) -> Result<Vec<&'a LabeledScenario>> {
    if size > order.len() || order.len() != pool.len() {
        return Err(Error::Invalid(format!(
            "subset of {size} from a pool of {} with an order of {}",
            pool.len(),
            order.len()
        )));
    }
    Ok(order[..size].iter().map(|&i| &pool[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_size_examples() {
        assert_eq!(subset_sizes(300_000, &[0]).unwrap(), vec![300_000]);
        assert_eq!(subset_sizes(300_000, &[3]).unwrap(), vec![4687]);
        assert_eq!(subset_sizes(4, &[1]).unwrap(), vec![1]);
        assert_eq!(subset_sizes(2000, &[0, 1, 2, 3]).unwrap(), vec![2000, 500, 125, 31]);
        assert!(subset_sizes(3, &[1]).is_err());
        assert!(subset_sizes(0, &[0]).is_err());
        assert!(subset_sizes(10, &[40]).is_err());
    }

    #[test]
    fn split_seed_streams_are_disjoint() {
        let mut seen = std::collections::HashSet::new();
        for split in Split::ALL {
            for i in 0..5000 {
                assert!(seen.insert(scenario_seed(7, split, i)));
            }
        }
    }
}
