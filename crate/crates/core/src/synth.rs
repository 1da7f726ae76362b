//! Per-device recordings: source audio, levelling, RIR convolution and mixing.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rir::{synthesize_rir_with, RirOptions, RoomImpulseResponse};
use crate::scene::{Point, SceneSpec};
use crate::{derive_seed, rng_from_seed, Rng};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_DURATION: f64 = 2.0;
/// 94 dB SPL corresponds to an RMS of 1.0.
pub const REFERENCE_SPL: f64 = 94.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    fn resized(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationScenario {
    pub scene: SceneSpec,
    pub device_waveforms: Vec<Waveform>,
    pub label: usize,
    pub duration: f64,
}

impl ArbitrationScenario {
    pub fn num_devices(&self) -> usize {
        self.device_waveforms.len()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex<f64>], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let fft = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        fft.process(buf);
    });
}

fn spectrum(x: &[f64], n: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    fft_in_place(&mut buf, false);
    buf
}

fn trimmed_len(x_len: usize, rir: &RoomImpulseResponse) -> usize {
    let full = x_len + rir.taps.len() - 1;
    let trim = x_len + (rir.rt60_target * f64::from(rir.sample_rate)).ceil() as usize;
    full.min(trim)
}

/// Linear convolution via FFT, trimmed to `|x| + ceil(rt60 * fs)` samples.
pub fn convolve(x: &Waveform, rir: &RoomImpulseResponse) -> Result<Waveform> {
    if x.sample_rate != rir.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: x.sample_rate,
            right: rir.sample_rate,
        });
    }
    if x.is_empty() || rir.taps.is_empty() {
        return Err(invalid("convolution of an empty signal"));
    }
    let full = x.len() + rir.taps.len() - 1;
    let n = full.next_power_of_two();
    let mut a = spectrum(&x.samples, n);
    let b = spectrum(&rir.taps, n);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    fft_in_place(&mut a, true);
    let scale = 1.0 / n as f64;
    let len = trimmed_len(x.len(), rir);
    let samples = a[..len].iter().map(|c| c.re * scale).collect();
    Waveform::new(samples, x.sample_rate)
}

/// Scales `x` to the RMS implied by `level_spl` (94 dB SPL = RMS 1.0).
pub fn set_level(x: &Waveform, level_spl: f64) -> Result<Waveform> {
    let rms = x.rms();
    if rms == 0.0 {
        return Err(Error::SilentInput);
    }
    let gain = 10f64.powf((level_spl - REFERENCE_SPL) / 20.0) / rms;
    Waveform::new(x.samples.iter().map(|v| v * gain).collect(), x.sample_rate)
}

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn new(b: [f64; 3], a0: f64, a: [f64; 2]) -> Self {
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a[0] / a0, a[1] / a0],
            z: [0.0; 2],
        }
    }

    fn lowpass(fc: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * PI * fc / fs;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        Self::new([(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0], 1.0 + alpha, [-2.0 * c, 1.0 - alpha])
    }

    fn highpass(fc: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * PI * fc / fs;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        Self::new([(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0], 1.0 + alpha, [-2.0 * c, 1.0 - alpha])
    }

    fn bandpass(fc: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * PI * fc / fs;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        Self::new([alpha, 0.0, -alpha], 1.0 + alpha, [-2.0 * c, 1.0 - alpha])
    }

    /// Unity-peak two-pole resonator; coefficients may be retuned between samples.
    fn retune_resonator(&mut self, fc: f64, bw: f64, fs: f64) {
        let r = (-PI * bw / fs).exp();
        let theta = 2.0 * PI * fc / fs;
        self.a = [-2.0 * r * theta.cos(), r * r];
        let (s1, c1) = theta.sin_cos();
        let (s2, c2) = (2.0 * theta).sin_cos();
        let re = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let im = -self.a[0] * s1 - self.a[1] * s2;
        self.b = [(re * re + im * im).sqrt(), 0.0, 0.0];
    }

    fn process(&mut self, x: f64) -> f64 {
        // Transposed direct form II.
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    fn run(&mut self, xs: &mut [f64]) {
        for v in xs {
            *v = self.process(*v);
        }
    }
}

fn band_limit(x: &mut [f64], fs: f64) {
    let q = std::f64::consts::FRAC_1_SQRT_2;
    for _ in 0..2 {
        Biquad::highpass(120.0, q, fs).run(x);
        Biquad::lowpass(3600.0, q, fs).run(x);
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    // Box-Muller; one value per call keeps the stream simple to reason about.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Vowel formant targets (F1, F2, F3), Hz.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [640.0, 1190.0, 2390.0],
];
const FORMANT_BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];

/// A speech-like utterance: a glottal pulse train through moving formant
/// resonators, syllabic amplitude envelopes and band-passed fricative bursts.
pub fn synthetic_speech(duration: f64, sample_rate: u32, rng: &mut Rng) -> Result<Waveform> {
    if !(duration > 0.0) {
        return Err(invalid("duration must be positive"));
    }
    let fs = f64::from(sample_rate);
    let n = (duration * fs).round() as usize;
    let mut out = vec![0.0; n];

    let start = rng.random_range(0.05..0.25f64).min(duration * 0.25);
    let active = rng.random_range(0.9..1.4f64).min(duration - start);
    let syllables = rng.random_range(3..=5usize);
    let f0_base = rng.random_range(90.0..220.0f64);
    let syl_len = active / syllables as f64;

    let mut formants = [Biquad::new([1.0, 0.0, 0.0], 1.0, [0.0, 0.0]); 3];
    let mut phase = 0.0f64;
    let mut prev_vowel = VOWELS[rng.random_range(0..VOWELS.len())];
    for s in 0..syllables {
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let gap = rng.random_range(0.03..0.08f64).min(syl_len * 0.3);
        let t0 = start + s as f64 * syl_len;
        let t1 = t0 + syl_len - gap;
        let fricative = rng.random_bool(0.5);
        let fric_len = rng.random_range(0.04..0.1f64).min((t1 - t0) * 0.4);
        let fric_centre = rng.random_range(2200.0..3400.0f64);
        let peak = rng.random_range(0.6..1.0f64);
        let voiced_start = if fricative { t0 + fric_len } else { t0 };

        if fricative {
            let (a, b) = ((t0 * fs) as usize, ((t0 + fric_len) * fs) as usize);
            let mut bp = Biquad::bandpass(fric_centre, 2.0, fs);
            for (i, o) in out.iter_mut().enumerate().take(b.min(n)).skip(a) {
                let u = (i - a) as f64 / (b - a).max(1) as f64;
                let env = (PI * u).sin().powi(2) * 0.35 * peak;
                *o += env * bp.process(gaussian(rng));
            }
        }

        let (a, b) = ((voiced_start * fs) as usize, (t1 * fs) as usize);
        let span = (b.saturating_sub(a)).max(1) as f64;
        for i in a..b.min(n) {
            let u = (i - a) as f64 / span;
            let t = i as f64 / fs;
            let f0 = f0_base * (1.0 + 0.08 * (2.0 * PI * 3.0 * t).sin() - 0.1 * (t - start) / active);
            phase += f0 / fs;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            // Glide from the previous vowel into this one over the first third.
            let mix = (u * 3.0).min(1.0);
            let mut y = pulse;
            for (k, filt) in formants.iter_mut().enumerate() {
                let fc = prev_vowel[k] + (vowel[k] - prev_vowel[k]) * mix;
                filt.retune_resonator(fc, FORMANT_BANDWIDTHS[k], fs);
                y = filt.process(y);
            }
            let attack = (u / 0.15).min(1.0);
            let release = ((1.0 - u) / 0.25).min(1.0);
            let env = peak * (0.5 - 0.5 * (PI * attack).cos()) * (0.5 - 0.5 * (PI * release).cos());
            out[i] += env * y;
        }
        prev_vowel = vowel;
    }
    band_limit(&mut out, fs);
    if out.iter().all(|&v| v == 0.0) {
        return Err(Error::SilentInput);
    }
    Waveform::new(out, sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    SpeechShaped,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::SpeechShaped];
}

pub fn noise(kind: NoiseKind, duration: f64, sample_rate: u32, rng: &mut Rng) -> Result<Waveform> {
    if !(duration > 0.0) {
        return Err(invalid("duration must be positive"));
    }
    let fs = f64::from(sample_rate);
    let n = (duration * fs).round() as usize;
    let mut x: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
    match kind {
        NoiseKind::White => {}
        NoiseKind::Pink => {
            // Paul Kellet's refined pinking filter.
            let mut b = [0.0f64; 7];
            for v in x.iter_mut() {
                let w = *v;
                b[0] = 0.99886 * b[0] + w * 0.0555179;
                b[1] = 0.99332 * b[1] + w * 0.0750759;
                b[2] = 0.96900 * b[2] + w * 0.1538520;
                b[3] = 0.86650 * b[3] + w * 0.3104856;
                b[4] = 0.55000 * b[4] + w * 0.5329522;
                b[5] = -0.7616 * b[5] - w * 0.0168980;
                *v = b.iter().sum::<f64>() + w * 0.5362;
                b[6] = w * 0.115926;
            }
        }
        NoiseKind::SpeechShaped => {
            let q = std::f64::consts::FRAC_1_SQRT_2;
            Biquad::highpass(100.0, q, fs).run(&mut x);
            Biquad::lowpass(800.0, 0.6, fs).run(&mut x);
            Biquad::lowpass(3000.0, q, fs).run(&mut x);
        }
    }
    Waveform::new(x, sample_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    SyntheticSpeech,
    File(PathBuf),
}

/// Source audio for a scene.
///
/// Files are loaded as mono WAV and resampled to 16 kHz when needed; they are
/// not trimmed to `duration`.
pub fn generate_source_audio(kind: &SourceKind, duration: f64, rng: &mut Rng) -> Result<Waveform> {
    match kind {
        SourceKind::SyntheticSpeech => synthetic_speech(duration, DEFAULT_SAMPLE_RATE, rng),
        SourceKind::File(path) => {
            if !(duration > 0.0) {
                return Err(invalid("duration must be positive"));
            }
            load_wav_mono(path, DEFAULT_SAMPLE_RATE)
        }
    }
}

/// Reads a mono WAV file and resamples it to `target_rate`.
pub fn load_wav_mono(path: &Path, target_rate: u32) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "expected mono audio, found {} channels",
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / f64::from(1u32 << (bits - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    let w = Waveform::new(samples, spec.sample_rate)?;
    resample(&w, target_rate)
}

/// Band-limited windowed-sinc resampling.
pub fn resample(x: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(invalid("target sample rate must be positive"));
    }
    if x.sample_rate == target_rate {
        return Ok(x.clone());
    }
    let ratio = f64::from(x.sample_rate) / f64::from(target_rate);
    let cutoff = (1.0 / ratio).min(1.0);
    let half = 32.0 / cutoff;
    let out_len = (x.len() as f64 / ratio).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let t = m as f64 * ratio;
        let lo = (t - half).ceil().max(0.0) as usize;
        let hi = ((t + half).floor() as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        for k in lo..=hi {
            let d = t - k as f64;
            let arg = PI * cutoff * d;
            let sinc = if arg == 0.0 { 1.0 } else { arg.sin() / arg };
            let w = 0.5 + 0.5 * (PI * d / (half + 1.0)).cos();
            acc += x.samples[k] * cutoff * sinc * w;
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

/// Source of room impulse responses for a scene.
pub trait RirProvider {
    fn rir(&self, scene: &SceneSpec, source: &Point, mic: &Point) -> Result<RoomImpulseResponse>;
}

/// Synthesises RIRs on demand with the image source method.
#[derive(Debug, Clone, Copy)]
pub struct IsmRirProvider {
    pub sample_rate: u32,
    pub options: RirOptions,
}

impl Default for IsmRirProvider {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            options: RirOptions::default(),
        }
    }
}

impl RirProvider for IsmRirProvider {
    fn rir(&self, scene: &SceneSpec, source: &Point, mic: &Point) -> Result<RoomImpulseResponse> {
        synthesize_rir_with(&scene.room_dims, source, mic, scene.rt60, self.sample_rate, &self.options)
    }
}

impl<P: RirProvider + ?Sized> RirProvider for &P {
    fn rir(&self, scene: &SceneSpec, source: &Point, mic: &Point) -> Result<RoomImpulseResponse> {
        (**self).rir(scene, source, mic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Length of every device recording, seconds.
    pub duration: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            duration: DEFAULT_DURATION,
        }
    }
}

/// Renders one recording per device:
/// `y_d = rir(speaker -> d) * speech + sum_k rir(noise_k -> d) * noise_k`,
/// each fitted to `duration` seconds (cropped or zero-padded).
///
/// `speech` and `noises` must already be levelled; see [`render_scene`].
pub fn render_scenario(
    scene: &SceneSpec,
    speech: &Waveform,
    noises: &[Waveform],
    rir_provider: &impl RirProvider,
    options: &RenderOptions,
) -> Result<ArbitrationScenario> {
    if noises.len() != scene.noise_positions.len() {
        return Err(invalid(format!(
            "{} noise signals for {} noise sources",
            noises.len(),
            scene.noise_positions.len()
        )));
    }
    let fs = speech.sample_rate;
    if let Some(w) = noises.iter().find(|w| w.sample_rate != fs) {
        return Err(Error::SampleRateMismatch {
            left: fs,
            right: w.sample_rate,
        });
    }
    let out_len = (options.duration * f64::from(fs)).round() as usize;
    if out_len == 0 {
        return Err(invalid("render duration must be positive"));
    }
    let sources: Vec<(&Point, &Waveform)> = std::iter::once((&scene.speaker_position, speech))
        .chain(scene.noise_positions.iter().zip(noises))
        .collect();

    let mut device_waveforms = Vec::with_capacity(scene.num_devices());
    let mut spectra: Option<(usize, Vec<Vec<Complex<f64>>>)> = None;
    for mic in &scene.device_positions {
        let rirs = sources
            .iter()
            .map(|(p, _)| rir_provider.rir(scene, p, mic))
            .collect::<Result<Vec<_>>>()?;
        if let Some(r) = rirs.iter().find(|r| r.sample_rate != fs) {
            return Err(Error::SampleRateMismatch {
                left: fs,
                right: r.sample_rate,
            });
        }
        // Summing in the frequency domain is exact as long as no source's
        // trimmed output is shorter than the recording window.
        let fast = sources
            .iter()
            .zip(&rirs)
            .all(|((_, x), r)| trimmed_len(x.len(), r) >= out_len && !x.is_empty());
        if fast {
            let max_x = sources.iter().map(|(_, x)| x.len()).max().unwrap_or(0);
            let max_h = rirs.iter().map(|r| r.taps.len()).max().unwrap_or(1);
            let n = (max_x + max_h - 1).next_power_of_two();
            if spectra.as_ref().map(|(sz, _)| *sz) != Some(n) {
                spectra = Some((n, sources.iter().map(|(_, x)| spectrum(&x.samples, n)).collect()));
            }
            let (_, specs) = spectra.as_ref().expect("spectra computed above");
            let mut acc = vec![Complex::new(0.0, 0.0); n];
            for (spec, rir) in specs.iter().zip(&rirs) {
                let h = spectrum(&rir.taps, n);
                for ((a, s), hv) in acc.iter_mut().zip(spec).zip(&h) {
                    *a += s * hv;
                }
            }
            fft_in_place(&mut acc, true);
            let scale = 1.0 / n as f64;
            let samples = acc[..out_len].iter().map(|c| c.re * scale).collect();
            device_waveforms.push(Waveform::new(samples, fs)?);
        } else {
            let mut y = vec![0.0; out_len];
            for ((_, x), rir) in sources.iter().zip(&rirs) {
                let c = convolve(x, rir)?;
                for (o, v) in y.iter_mut().zip(&c.samples) {
                    *o += v;
                }
            }
            device_waveforms.push(Waveform::new(y, fs)?.resized(out_len));
        }
    }
    Ok(ArbitrationScenario {
        scene: scene.clone(),
        device_waveforms,
        label: scene.label,
        duration: options.duration,
    })
}

/// Levelled synthetic speech and built-in noises for a scene, all derived from
/// the scene seed.
pub fn scene_sources(scene: &SceneSpec, duration: f64, sample_rate: u32) -> Result<(Waveform, Vec<Waveform>)> {
    let mut rng = rng_from_seed(derive_seed(scene.seed, 0x5350_4545_4348));
    let speech = set_level(&synthetic_speech(duration, sample_rate, &mut rng)?, scene.speech_level)?;
    let noises = (0..scene.noise_positions.len())
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(scene.seed, 0x4e4f_4953_0000 + k as u64));
            let kind = NoiseKind::ALL[rng.random_range(0..NoiseKind::ALL.len())];
            set_level(&noise(kind, duration, sample_rate, &mut rng)?, scene.noise_level)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((speech, noises))
}

/// Renders a scene with its seed-derived synthetic speech and noises.
pub fn render_scene(
    scene: &SceneSpec,
    rir_provider: &impl RirProvider,
    options: &RenderOptions,
    sample_rate: u32,
) -> Result<ArbitrationScenario> {
    let (speech, noises) = scene_sources(scene, options.duration, sample_rate)?;
    render_scenario(scene, &speech, &noises, rir_provider, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len() + h.len() - 1];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                y[i + j] += a * b;
            }
        }
        y
    }

    #[test]
    fn unit_impulse_is_identity() {
        let x = Waveform::new(vec![0.5, -1.0, 0.25, 2.0], 16_000).unwrap();
        let y = convolve(&x, &RoomImpulseResponse::unit_impulse(16_000)).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.samples.iter().zip(&y.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let mut rng = rng_from_seed(7);
        let x: Vec<f64> = (0..3000).map(|_| gaussian(&mut rng)).collect();
        let h: Vec<f64> = (0..700).map(|_| gaussian(&mut rng) * 0.1).collect();
        let rir = RoomImpulseResponse {
            taps: h.clone(),
            rt60_target: 1.0,
            ..RoomImpulseResponse::unit_impulse(16_000)
        };
        let y = convolve(&Waveform::new(x.clone(), 16_000).unwrap(), &rir).unwrap();
        let d = direct_conv(&x, &h);
        assert_eq!(y.len(), d.len());
        let err = y.samples.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "max abs diff {err}");
    }

    #[test]
    fn rate_mismatch_rejected() {
        let x = Waveform::new(vec![1.0; 10], 8000).unwrap();
        assert!(matches!(
            convolve(&x, &RoomImpulseResponse::unit_impulse(16_000)),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn level_examples() {
        let x = Waveform::new((0..1000).map(|i| (i as f64 * 0.1).sin()).collect(), 16_000).unwrap();
        assert!((set_level(&x, 94.0).unwrap().rms() - 1.0).abs() < 1e-12);
        assert!((set_level(&x, 65.0).unwrap().rms() - 0.035_481_3).abs() < 1e-6);
        let e55 = set_level(&x, 55.0).unwrap().energy();
        let e70 = set_level(&x, 70.0).unwrap().energy();
        assert!((10.0 * (e70 / e55).log10() - 15.0).abs() < 1e-9);
        let silent = Waveform::new(vec![0.0; 100], 16_000).unwrap();
        assert!(matches!(set_level(&silent, 60.0), Err(Error::SilentInput)));
    }

    #[test]
    fn synthetic_speech_is_deterministic() {
        let a = synthetic_speech(2.0, 16_000, &mut rng_from_seed(3)).unwrap();
        let b = synthetic_speech(2.0, 16_000, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 32_000);
        assert!(a.energy() > 0.0);
    }

    #[test]
    fn resample_doubles_length() {
        let x = Waveform::new((0..8000).map(|i| (i as f64 * 0.05).sin()).collect(), 8000).unwrap();
        let y = resample(&x, 16_000).unwrap();
        assert!((y.len() as i64 - 16_000).abs() <= 1);
        assert_eq!(y.sample_rate, 16_000);
    }

    #[test]
    fn noise_kinds_are_finite() {
        for kind in NoiseKind::ALL {
            let w = noise(kind, 0.5, 16_000, &mut rng_from_seed(1)).unwrap();
            assert_eq!(w.len(), 8000);
            assert!(w.rms() > 0.0);
        }
    }
}
