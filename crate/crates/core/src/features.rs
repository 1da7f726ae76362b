//! Log-filterbank energy (LFBE) features.
//!
//! 25 ms Hann frames every 10 ms at 16 kHz, a 512-point power spectrum, 64
//! triangular HTK-mel bands over 0-8 kHz and a natural log floored at 1e-10.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::synth::Waveform;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_SIZE: usize = 400;
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const NUM_BINS: usize = 64;
pub const POWER_FLOOR: f64 = 1e-10;
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// `frames x 64` row-major LFBE matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl FeatureMatrix {
    pub fn new(frames: usize, values: Vec<f32>, normalized: bool) -> Result<Self> {
        if values.len() != frames * NUM_BINS {
            return Err(Error::Shape(format!(
                "{} values do not form {frames} frames of {NUM_BINS} bins",
                values.len()
            )));
        }
        Ok(Self {
            frames,
            values,
            normalized,
        })
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * NUM_BINS..(frame + 1) * NUM_BINS]
    }

    pub fn get(&self, frame: usize, bin: usize) -> f32 {
        self.values[frame * NUM_BINS + bin]
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(invalid(format!("frame range {start}..{end} of {}", self.frames)));
        }
        Ok(Self {
            frames: end - start,
            values: self.values[start * NUM_BINS..end * NUM_BINS].to_vec(),
            normalized: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub values: Vec<f64>,
}

/// `1 + floor((n - 400) / 160)` for `n >= 400`, otherwise 0.
pub fn frame_count(num_samples: usize) -> usize {
    if num_samples < FRAME_SIZE {
        0
    } else {
        1 + (num_samples - FRAME_SIZE) / HOP
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequency of each mel band, Hz.
pub fn mel_centers() -> Vec<f64> {
    let top = hz_to_mel(f64::from(SAMPLE_RATE) / 2.0);
    (1..=NUM_BINS)
        .map(|i| mel_to_hz(top * i as f64 / (NUM_BINS + 1) as f64))
        .collect()
}

struct Frontend {
    window: Vec<f64>,
    /// `NUM_BINS` sparse filters: (first FFT bin, weights).
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

fn frontend() -> &'static Frontend {
    static FRONTEND: OnceLock<Frontend> = OnceLock::new();
    FRONTEND.get_or_init(|| {
        // Periodic Hann window.
        let window = (0..FRAME_SIZE)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FRAME_SIZE as f64).cos())
            .collect();
        let top = hz_to_mel(f64::from(SAMPLE_RATE) / 2.0);
        let edges: Vec<f64> = (0..NUM_BINS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (NUM_BINS + 1) as f64))
            .collect();
        let bin_hz = f64::from(SAMPLE_RATE) / FFT_SIZE as f64;
        let filters = (0..NUM_BINS)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..=FFT_SIZE / 2 {
                    let f = k as f64 * bin_hz;
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Frontend { window, filters, fft }
    })
}

/// Unnormalised LFBE features of a 16 kHz waveform.
pub fn lfbe(x: &Waveform) -> Result<FeatureMatrix> {
    if x.sample_rate != SAMPLE_RATE {
        return Err(invalid(format!("LFBE expects {SAMPLE_RATE} Hz input, got {}", x.sample_rate)));
    }
    lfbe_samples(&x.samples)
}

pub fn lfbe_samples(samples: &[f64]) -> Result<FeatureMatrix> {
    let frames = frame_count(samples.len());
    if frames == 0 {
        return Err(invalid(format!(
            "LFBE needs at least {FRAME_SIZE} samples, got {}",
            samples.len()
        )));
    }
    let fe = frontend();
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut scratch = vec![Complex::new(0.0, 0.0); fe.fft.get_inplace_scratch_len()];
    let mut power = vec![0.0; FFT_SIZE / 2 + 1];
    let mut values = Vec::with_capacity(frames * NUM_BINS);
    for t in 0..frames {
        let frame = &samples[t * HOP..t * HOP + FRAME_SIZE];
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < FRAME_SIZE {
                Complex::new(frame[i] * fe.window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fe.fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (first, weights) in &fe.filters {
            let e: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
            values.push(e.max(POWER_FLOOR).ln() as f32);
        }
    }
    FeatureMatrix::new(frames, values, false)
}

/// Per-utterance, per-bin standardisation.
pub fn normalize(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    if f.frames < 2 {
        return Err(invalid("normalisation needs at least two frames"));
    }
    let n = f.frames as f64;
    let mut mean = [0.0f64; NUM_BINS];
    let mut var = [0.0f64; NUM_BINS];
    for t in 0..f.frames {
        for (m, &v) in mean.iter_mut().zip(f.row(t)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for t in 0..f.frames {
        for ((s, m), &v) in var.iter_mut().zip(&mean).zip(f.row(t)) {
            *s += (f64::from(v) - m).powi(2);
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s / n).max(VARIANCE_FLOOR).sqrt()).collect();
    let mut values = Vec::with_capacity(f.values.len());
    for t in 0..f.frames {
        for (q, &v) in f.row(t).iter().enumerate() {
            values.push(((f64::from(v) - mean[q]) * inv_std[q]) as f32);
        }
    }
    FeatureMatrix::new(f.frames, values, true)
}

/// Mean of each frame's feature vector.
pub fn envelope(f: &FeatureMatrix) -> Envelope {
    let values = (0..f.frames)
        .map(|t| f.row(t).iter().map(|&v| f64::from(v)).sum::<f64>() / NUM_BINS as f64)
        .collect();
    Envelope { values }
}
