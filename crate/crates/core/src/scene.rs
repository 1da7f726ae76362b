//! Arbitration scene sampling.
//!
//! A scene is a shoebox room with a reverberation time, a set of devices, one
//! talker and a few noise sources. The ground-truth arbitration label is the
//! device closest to the talker.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::{rng_from_seed, Rng};

/// A point in room coordinates, meters.
pub type Point = [f64; 3];

/// Rejection loops give up after this many draws.
pub const MAX_ATTEMPTS: usize = 10_000;

pub fn distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        self.low + (self.high - self.low) * rng.random::<f64>()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite()) || self.low > self.high {
            return Err(Error::InvalidConfig(format!(
                "{name}: expected finite low <= high, got [{}, {}]",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// `low + Poisson(mean - low)`, rejected above `high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedPoissonParams {
    pub mean: f64,
    pub low: u32,
    pub high: u32,
}

impl ShiftedPoissonParams {
    pub const fn new(mean: f64, low: u32, high: u32) -> Self {
        Self { mean, low, high }
    }

    pub fn validate(&self) -> Result<()> {
        if self.low > self.high || !self.mean.is_finite() || self.mean < f64::from(self.low) {
            return Err(Error::InvalidConfig(format!(
                "shifted Poisson needs low <= high and mean >= low, got m={} l={} h={}",
                self.mean, self.low, self.high
            )));
        }
        Ok(())
    }

    /// Mean of the truncated distribution, by direct summation.
    pub fn truncated_mean(&self) -> f64 {
        let lambda = self.mean - f64::from(self.low);
        if lambda <= 0.0 || self.low == self.high {
            return f64::from(self.low);
        }
        let (mut z, mut acc) = (0.0, 0.0);
        let mut p = (-lambda).exp();
        for k in 0..=(self.high - self.low) {
            if k > 0 {
                p *= lambda / f64::from(k);
            }
            z += p;
            acc += f64::from(k) * p;
        }
        f64::from(self.low) + acc / z
    }
}

/// Draws from a [`ShiftedPoissonParams`] distribution.
pub fn shifted_poisson_sample(params: &ShiftedPoissonParams, rng: &mut Rng) -> Result<u32> {
    params.validate()?;
    let lambda = params.mean - f64::from(params.low);
    if params.low == params.high || lambda <= 0.0 {
        return Ok(params.low);
    }
    let poisson = Poisson::new(lambda).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let span = f64::from(params.high - params.low);
    for _ in 0..MAX_ATTEMPTS {
        let k: f64 = poisson.sample(rng);
        if k <= span {
            return Ok(params.low + k as u32);
        }
    }
    Err(Error::SamplingFailure {
        what: format!("shifted Poisson {params:?}"),
        attempts: MAX_ATTEMPTS,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub room_length: Interval,
    pub room_width: Interval,
    pub room_height: Interval,
    /// Beta(alpha, beta) for the reverberation time in seconds.
    pub rt60_beta: (f64, f64),
    pub device_count: ShiftedPoissonParams,
    pub noise_count: ShiftedPoissonParams,
    /// dB SPL.
    pub speech_level: Interval,
    /// dB SPL.
    pub noise_level: Interval,
    pub wall_margin: f64,
    pub min_separation: f64,
    pub device_height: Interval,
    pub speaker_height: Interval,
    pub noise_height: Interval,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            room_length: Interval::new(3.0, 10.0),
            room_width: Interval::new(3.0, 10.0),
            room_height: Interval::new(2.5, 6.0),
            rt60_beta: (1.1, 3.0),
            device_count: ShiftedPoissonParams::new(3.0, 2, 15),
            noise_count: ShiftedPoissonParams::new(2.0, 1, 5),
            speech_level: Interval::new(55.0, 70.0),
            noise_level: Interval::new(50.0, 70.0),
            wall_margin: 0.5,
            min_separation: 0.3,
            device_height: Interval::new(0.5, 1.5),
            speaker_height: Interval::new(1.0, 2.0),
            noise_height: Interval::new(0.3, 2.0),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        self.room_length.validate("room_length")?;
        self.room_width.validate("room_width")?;
        self.room_height.validate("room_height")?;
        self.speech_level.validate("speech_level")?;
        self.noise_level.validate("noise_level")?;
        self.device_height.validate("device_height")?;
        self.speaker_height.validate("speaker_height")?;
        self.noise_height.validate("noise_height")?;
        let (a, b) = self.rt60_beta;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidConfig(format!("beta parameters must be > 0, got ({a}, {b})")));
        }
        if !(self.wall_margin >= 0.0) || !(self.min_separation >= 0.0) {
            return Err(Error::InvalidConfig("wall_margin and min_separation must be >= 0".into()));
        }
        for (name, iv) in [
            ("room_length", self.room_length),
            ("room_width", self.room_width),
            ("room_height", self.room_height),
        ] {
            if iv.low <= 2.0 * self.wall_margin {
                return Err(Error::InvalidConfig(format!(
                    "{name} lower bound {} leaves no room inside a {} m wall margin",
                    iv.low, self.wall_margin
                )));
            }
        }
        self.device_count.validate()?;
        self.noise_count.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// (length, width, height), meters.
    pub room_dims: [f64; 3],
    pub rt60: f64,
    pub device_positions: Vec<Point>,
    pub speaker_position: Point,
    pub noise_positions: Vec<Point>,
    pub speech_level: f64,
    pub noise_level: f64,
    pub label: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn num_devices(&self) -> usize {
        self.device_positions.len()
    }

    /// Checks every scene invariant against the config it was sampled from.
    pub fn check(&self, config: &SamplingConfig) -> std::result::Result<(), String> {
        let [l, w, h] = self.room_dims;
        let m = config.wall_margin;
        if !config.room_length.contains(l) || !config.room_width.contains(w) || !config.room_height.contains(h) {
            return Err(format!("room dims {:?} out of range", self.room_dims));
        }
        if !(self.rt60 > 0.0 && self.rt60 < 1.0) {
            return Err(format!("rt60 {} outside (0, 1)", self.rt60));
        }
        let nd = self.device_positions.len() as u32;
        if nd < config.device_count.low || nd > config.device_count.high {
            return Err(format!("{nd} devices"));
        }
        let nn = self.noise_positions.len() as u32;
        if nn < config.noise_count.low || nn > config.noise_count.high {
            return Err(format!("{nn} noise sources"));
        }
        let all: Vec<&Point> = self
            .device_positions
            .iter()
            .chain(std::iter::once(&self.speaker_position))
            .chain(self.noise_positions.iter())
            .collect();
        for p in &all {
            for (axis, dim) in [l, w, h].into_iter().enumerate() {
                if p[axis] < m || p[axis] > dim - m {
                    return Err(format!("position {p:?} outside the margin-shrunk room"));
                }
            }
        }
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if distance(all[i], all[j]) < config.min_separation {
                    return Err(format!("entities {i} and {j} closer than min_separation"));
                }
            }
        }
        let expected = assign_label(&self.device_positions, &self.speaker_position).map_err(|e| e.to_string())?;
        if expected != self.label {
            return Err(format!("label {} but closest device is {expected}", self.label));
        }
        if !config.speech_level.contains(self.speech_level) || !config.noise_level.contains(self.noise_level) {
            return Err("levels out of range".into());
        }
        Ok(())
    }
}

/// Index of the device closest to the speaker, lowest index on ties.
pub fn assign_label(device_positions: &[Point], speaker_position: &Point) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in device_positions.iter().enumerate() {
        let d = distance(p, speaker_position);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| invalid("assign_label needs at least one device"))
}

fn place(
    rng: &mut Rng,
    dims: [f64; 3],
    margin: f64,
    height: Interval,
    min_separation: f64,
    placed: &[Point],
    what: &str,
) -> Result<Point> {
    let x = Interval::new(margin, dims[0] - margin);
    let y = Interval::new(margin, dims[1] - margin);
    let z_low = height.low.max(margin).min(dims[2] - margin);
    let z_high = height.high.min(dims[2] - margin).max(z_low);
    let z = Interval::new(z_low, z_high);
    for _ in 0..MAX_ATTEMPTS {
        let p = [x.sample(rng), y.sample(rng), z.sample(rng)];
        if placed.iter().all(|q| distance(&p, q) >= min_separation) {
            return Ok(p);
        }
    }
    Err(Error::PlacementFailure {
        what: what.to_string(),
        attempts: MAX_ATTEMPTS,
    })
}

/// Samples a scene; a pure function of `(config, seed)`.
pub fn sample_scene(config: &SamplingConfig, seed: u64) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);
    let dims = [
        config.room_length.sample(&mut rng),
        config.room_width.sample(&mut rng),
        config.room_height.sample(&mut rng),
    ];
    let beta = Beta::new(config.rt60_beta.0, config.rt60_beta.1).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rt60 = 0.0;
    for attempt in 0..=MAX_ATTEMPTS {
        if attempt == MAX_ATTEMPTS {
            return Err(Error::SamplingFailure {
                what: "rt60".into(),
                attempts: MAX_ATTEMPTS,
            });
        }
        rt60 = beta.sample(&mut rng);
        if rt60 > 0.0 && rt60 < 1.0 {
            break;
        }
    }
    let num_devices = shifted_poisson_sample(&config.device_count, &mut rng)? as usize;
    let num_noises = shifted_poisson_sample(&config.noise_count, &mut rng)? as usize;
    let speech_level = config.speech_level.sample(&mut rng);
    let noise_level = config.noise_level.sample(&mut rng);

    let margin = config.wall_margin;
    let sep = config.min_separation;
    let mut placed: Vec<Point> = Vec::with_capacity(1 + num_devices + num_noises);
    let speaker = place(&mut rng, dims, margin, config.speaker_height, sep, &placed, "speaker")?;
    placed.push(speaker);
    let mut devices = Vec::with_capacity(num_devices);
    for _ in 0..num_devices {
        let p = place(&mut rng, dims, margin, config.device_height, sep, &placed, "device")?;
        placed.push(p);
        devices.push(p);
    }
    let mut noises = Vec::with_capacity(num_noises);
    for _ in 0..num_noises {
        let p = place(&mut rng, dims, margin, config.noise_height, sep, &placed, "noise source")?;
        placed.push(p);
        noises.push(p);
    }
    let label = assign_label(&devices, &speaker)?;
    Ok(SceneSpec {
        room_dims: dims,
        rt60,
        device_positions: devices,
        speaker_position: speaker,
        noise_positions: noises,
        speech_level,
        noise_level,
        label,
        seed,
    })
}
