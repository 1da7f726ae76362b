//! Shoebox room impulse responses via the image source method.
//!
//! Every image contributes an 81-tap Hann-windowed sinc centred on its
//! (fractional) propagation delay, scaled by `beta^reflections / (4 pi d)`
//! with a uniform pressure reflection coefficient `beta = sqrt(1 - alpha)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scene::{distance, Point};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Taps on each side of the kernel centre; the kernel spans `2 * 40 + 1` taps.
pub const KERNEL_HALF_WIDTH: usize = 40;
/// Extra decay time simulated beyond the target RT60, seconds.
pub const TAIL_MARGIN: f64 = 0.05;
pub const ALPHA_MIN: f64 = 0.01;
pub const HIGHPASS_HZ: f64 = 50.0;
const MIN_SOURCE_MIC_DISTANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomImpulseResponse {
    pub sample_rate: u32,
    pub taps: Vec<f64>,
    pub source: Point,
    pub mic: Point,
    pub rt60_target: f64,
    /// Direct-path delay in samples.
    pub direct_delay: f64,
}

impl RoomImpulseResponse {
    /// A single unit tap at index 0; the identity filter.
    pub fn unit_impulse(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            taps: vec![1.0],
            source: [0.0; 3],
            mic: [0.0; 3],
            rt60_target: 0.0,
            direct_delay: 0.0,
        }
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Point,
    pub reflection_count: u32,
}

fn volume_and_surface(dims: &[f64; 3]) -> Result<(f64, f64)> {
    if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(invalid(format!("room dimensions must be positive, got {dims:?}")));
    }
    let [l, w, h] = *dims;
    Ok((l * w * h, 2.0 * (l * w + l * h + w * h)))
}

/// Uniform absorption coefficient from Sabine's formula, clamped to `[0.01, 1]`.
pub fn absorption_from_rt60(dims: &[f64; 3], rt60: f64) -> Result<f64> {
    let (v, s) = volume_and_surface(dims)?;
    if !(rt60.is_finite() && rt60 > 0.0) {
        return Err(invalid(format!("rt60 must be positive, got {rt60}")));
    }
    Ok((0.161 * v / (s * rt60)).clamp(ALPHA_MIN, 1.0))
}

/// Uniform absorption coefficient from Eyring's formula, clamped to `[0.01, 1]`.
pub fn eyring_absorption_from_rt60(dims: &[f64; 3], rt60: f64) -> Result<f64> {
    let (v, s) = volume_and_surface(dims)?;
    if !(rt60.is_finite() && rt60 > 0.0) {
        return Err(invalid(format!("rt60 must be positive, got {rt60}")));
    }
    Ok((1.0 - (-0.161 * v / (s * rt60)).exp()).clamp(ALPHA_MIN, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Absorption {
    Sabine,
    Eyring,
    /// Fitted per source/microphone pair so that the image-source energy
    /// decay reaches the requested RT60; see [`calibrated_absorption`].
    Calibrated,
    /// Fixed coefficient in `[0, 1]`, independent of the RT60.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RirOptions {
    pub absorption: Absorption,
    pub tail_margin: f64,
    /// Cutoff of the second-order Butterworth high-pass applied to the
    /// response; 0 disables it.
    ///
    /// Every image adds a positive pulse, and late in the tail many pulses
    /// land within one sample, so their low-frequency content adds
    /// coherently and inflates the tail energy. Removing it restores the
    /// intended decay.
    pub highpass_hz: f64,
}

impl Default for RirOptions {
    fn default() -> Self {
        Self {
            absorption: Absorption::Calibrated,
            tail_margin: TAIL_MARGIN,
            highpass_hz: HIGHPASS_HZ,
        }
    }
}

impl RirOptions {
    /// Absorption coefficient for a source/microphone pair.
    pub fn alpha(&self, dims: &[f64; 3], source: &Point, mic: &Point, rt60: f64) -> Result<f64> {
        match self.absorption {
            Absorption::Calibrated => calibrated_absorption(dims, source, mic, rt60, self.tail_margin),
            Absorption::Sabine => absorption_from_rt60(dims, rt60),
            Absorption::Eyring => eyring_absorption_from_rt60(dims, rt60),
            Absorption::Fixed(a) if (0.0..=1.0).contains(&a) => Ok(a),
            Absorption::Fixed(a) => Err(invalid(format!("absorption must lie in [0, 1], got {a}"))),
        }
    }
}

fn check_inside(dims: &[f64; 3], p: &Point, what: &str) -> Result<()> {
    for axis in 0..3 {
        if !(p[axis] >= 0.0 && p[axis] <= dims[axis]) {
            return Err(invalid(format!("{what} {p:?} lies outside room {dims:?}")));
        }
    }
    Ok(())
}

/// Mirror images of `s` along one axis of length `len`: `(coordinate, reflections)`.
fn axis_images(len: f64, s: f64, max_order: u32) -> Vec<(f64, u32)> {
    let o = i64::from(max_order);
    let mut out = Vec::new();
    for n in -(o / 2 + 1)..=(o / 2 + 1) {
        for q in 0..2i64 {
            let refl = (2 * n - q).unsigned_abs();
            if refl > u64::from(max_order) {
                continue;
            }
            let sign = if q == 0 { 1.0 } else { -1.0 };
            out.push((sign * s + 2.0 * n as f64 * len, refl as u32));
        }
    }
    out.sort_by_key(|&(_, r)| r);
    out
}

/// All images with total reflection count `<= max_order`.
pub fn enumerate_images(dims: &[f64; 3], source: &Point, max_order: u32) -> Result<Vec<ImageSource>> {
    volume_and_surface(dims)?;
    check_inside(dims, source, "source")?;
    let mut out = Vec::new();
    for_each_image(dims, source, max_order, None, |position, reflection_count| {
        out.push(ImageSource {
            position,
            reflection_count,
        })
    });
    Ok(out)
}

fn for_each_image(
    dims: &[f64; 3],
    source: &Point,
    max_order: u32,
    within: Option<(&Point, f64)>,
    mut f: impl FnMut(Point, u32),
) {
    let xs = axis_images(dims[0], source[0], max_order);
    let ys = axis_images(dims[1], source[1], max_order);
    let zs = axis_images(dims[2], source[2], max_order);
    let (centre, r2) = match within {
        Some((c, r)) => (*c, r * r),
        None => ([0.0; 3], f64::INFINITY),
    };
    for &(x, rx) in &xs {
        let dx2 = (x - centre[0]).powi(2);
        if dx2 > r2 {
            continue;
        }
        for &(y, ry) in &ys {
            if rx + ry > max_order {
                break;
            }
            let dxy2 = dx2 + (y - centre[1]).powi(2);
            if dxy2 > r2 {
                continue;
            }
            for &(z, rz) in &zs {
                if rx + ry + rz > max_order {
                    break;
                }
                if dxy2 + (z - centre[2]).powi(2) > r2 {
                    continue;
                }
                f([x, y, z], rx + ry + rz);
            }
        }
    }
}

/// Smallest order whose images all lie farther than `radius` from `mic`.
fn order_for_radius(dims: &[f64; 3], source: &Point, mic: &Point, radius: f64) -> u32 {
    // Per-axis nearest image for each reflection count; non-decreasing in the count.
    let nearest = |axis: usize, r: u32| -> f64 {
        let (len, s, m) = (dims[axis], source[axis], mic[axis]);
        let r = i64::from(r);
        let mut best = f64::INFINITY;
        for (n, q) in [(r / 2, 0), (-(r / 2), 0), ((r + 1) / 2, 1), ((1 - r) / 2, 1)] {
            if (2 * n - q).abs() != r {
                continue;
            }
            let sign = if q == 0 { 1.0 } else { -1.0 };
            best = best.min((sign * s + 2.0 * n as f64 * len - m).abs());
        }
        best
    };
    let mut order = 0u32;
    loop {
        let mut min_d2 = f64::INFINITY;
        for rx in 0..=order {
            let dx = nearest(0, rx);
            for ry in 0..=(order - rx) {
                let dy = nearest(1, ry);
                let dz = nearest(2, order - rx - ry);
                min_d2 = min_d2.min(dx * dx + dy * dy + dz * dz);
            }
        }
        if min_d2 > radius * radius {
            return order;
        }
        order += 1;
    }
}


const PROFILE_BIN: f64 = 1e-3;

/// Image energy reaching a microphone, binned by arrival time and reflection
/// count, before wall losses.
struct DecayProfile {
    bins: usize,
    orders: usize,
    weights: Vec<f64>,
}

impl DecayProfile {
    fn new(dims: &[f64; 3], source: &Point, mic: &Point, radius: f64) -> Self {
        let max_order = order_for_radius(dims, source, mic, radius);
        let bins = (radius / SPEED_OF_SOUND / PROFILE_BIN).ceil() as usize + 1;
        let orders = max_order as usize + 1;
        let mut weights = vec![0.0; bins * orders];
        for_each_image(dims, source, max_order, Some((mic, radius)), |pos, refl| {
            let d = distance(&pos, mic);
            let b = ((d / SPEED_OF_SOUND / PROFILE_BIN) as usize).min(bins - 1);
            weights[b * orders + refl as usize] += 1.0 / (d * d);
        });
        Self { bins, orders, weights }
    }

    /// Reverberation time of the binned decay for reflection energy factor
    /// `r = 1 - alpha`: a line through the -5..-25 dB span of the backward
    /// integrated energy, extrapolated to -60 dB.
    fn t60(&self, r: f64) -> f64 {
        let powers: Vec<f64> = std::iter::successors(Some(1.0), |p| Some(p * r)).take(self.orders).collect();
        let mut edc: Vec<f64> = (0..self.bins)
            .map(|b| {
                let w = &self.weights[b * self.orders..(b + 1) * self.orders];
                w.iter().zip(&powers).map(|(a, p)| a * p).sum()
            })
            .collect();
        for b in (0..self.bins - 1).rev() {
            edc[b] += edc[b + 1];
        }
        let total = edc[0];
        if total <= 0.0 {
            return 0.0;
        }
        let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (b, e) in edc.iter().enumerate() {
            let db = 10.0 * (e / total).log10();
            if (-25.0..=-5.0).contains(&db) {
                let t = (b as f64 + 0.5) * PROFILE_BIN;
                n += 1.0;
                sx += t;
                sy += db;
                sxx += t * t;
                sxy += t * db;
            }
        }
        let den = n * sxx - sx * sx;
        if n < 2.0 || den <= 0.0 {
            return 0.0;
        }
        let slope = (n * sxy - sx * sy) / den;
        if slope >= 0.0 {
            return f64::INFINITY;
        }
        -60.0 / slope
    }
}

/// Uniform absorption coefficient for which the image-source field between
/// `source` and `mic` decays with reverberation time `rt60`.
///
/// A shoebox image field is not diffuse: near-axial paths with few
/// reflections dominate the late tail, so it decays more slowly than the
/// Sabine or Eyring formulas predict. The coefficient is therefore found by
/// bisection on the binned image energy. Returns 1.0 when even a
/// fully absorbing room decays too slowly, and [`ALPHA_MIN`] when even the
/// most reflective room decays too quickly.
pub fn calibrated_absorption(dims: &[f64; 3], source: &Point, mic: &Point, rt60: f64, tail_margin: f64) -> Result<f64> {
    volume_and_surface(dims)?;
    check_inside(dims, source, "source")?;
    check_inside(dims, mic, "microphone")?;
    if !(rt60.is_finite() && rt60 > 0.0) {
        return Err(invalid(format!("rt60 must be positive, got {rt60}")));
    }
    let d0 = distance(source, mic);
    if d0 < MIN_SOURCE_MIC_DISTANCE {
        return Err(invalid(format!("source and microphone coincide (distance {d0} m)")));
    }
    let radius = (SPEED_OF_SOUND * (rt60 + tail_margin.max(0.0))).max(d0);
    let profile = DecayProfile::new(dims, source, mic, radius);
    // T60 grows with the reflection factor r = 1 - alpha.
    let (mut lo, mut hi) = (0.0, 1.0 - ALPHA_MIN);
    if profile.t60(hi) <= rt60 {
        return Ok(ALPHA_MIN);
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if profile.t60(mid) < rt60 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(1.0 - 0.5 * (lo + hi))
}

/// Causal second-order Butterworth high-pass (bilinear transform).
fn highpass_in_place(x: &mut [f64], cutoff: f64, fs: f64) {
    let w = 2.0 * PI * cutoff / fs;
    let (sin_w, cos_w) = w.sin_cos();
    let alpha = sin_w / std::f64::consts::SQRT_2;
    let a0 = 1.0 + alpha;
    let b0 = (1.0 + cos_w) / 2.0 / a0;
    let b1 = -(1.0 + cos_w) / a0;
    let a1 = -2.0 * cos_w / a0;
    let a2 = (1.0 - alpha) / a0;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * *v + b1 * x1 + b0 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Hann-windowed sinc fractional-delay kernel.
///
/// Adds `gain * k(n - delay)` into `out[n]` for the 81 taps around `delay`,
/// skipping taps outside `out`.
pub fn add_delayed_kernel(out: &mut [f64], delay: f64, gain: f64, tables: &KernelTables) {
    let base = delay.floor();
    let frac = delay - base;
    let base = base as i64;
    let hw = KERNEL_HALF_WIDTH as i64;
    // Clip the tap range to the output once so the loop below is branch-free.
    let first = (-hw).max(-base);
    let last = hw.min(out.len() as i64 - 1 - base);
    if first > last {
        return;
    }
    if frac == 0.0 {
        // The kernel is a unit impulse on an integer delay.
        if (first..=last).contains(&0) {
            out[base as usize] += gain;
        }
        return;
    }
    // sin(pi (m - f)) = -(-1)^m sin(pi f), and cos(pi (m - f) / W) by angle
    // subtraction, so only one sine and one cosine are evaluated per image.
    let scale = -0.5 * gain * (PI * frac).sin() / PI;
    let (ws, wc) = (PI * frac / WINDOW_SPAN).sin_cos();
    let lo = (first + hw) as usize;
    let hi = (last + hw) as usize + 1;
    let dst = &mut out[(base + first) as usize..=(base + last) as usize];
    let t = &tables;
    for (((o, &sgn), &m), (&c, &s)) in dst
        .iter_mut()
        .zip(&t.parity[lo..hi])
        .zip(&t.offset[lo..hi])
        .zip(t.cos_m[lo..hi].iter().zip(&t.sin_m[lo..hi]))
    {
        *o += scale * sgn / (m - frac) * (1.0 + c * wc + s * ws);
    }
}

const WINDOW_SPAN: f64 = KERNEL_HALF_WIDTH as f64 + 1.0;

/// Per-tap constants for [`add_delayed_kernel`].
#[derive(Debug, Clone)]
pub struct KernelTables {
    cos_m: Vec<f64>,
    sin_m: Vec<f64>,
    /// `(-1)^m`.
    parity: Vec<f64>,
    offset: Vec<f64>,
}

impl Default for KernelTables {
    fn default() -> Self {
        let hw = KERNEL_HALF_WIDTH as i64;
        let (sin_m, cos_m) = (-hw..=hw).map(|m| (PI * m as f64 / WINDOW_SPAN).sin_cos()).unzip();
        Self {
            cos_m,
            sin_m,
            parity: (-hw..=hw).map(|m| if m % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            offset: (-hw..=hw).map(|m| m as f64).collect(),
        }
    }
}

/// Image-source RIR with the default options (calibrated absorption, 50 ms tail margin).
pub fn synthesize_rir(
    dims: &[f64; 3],
    source: &Point,
    mic: &Point,
    rt60: f64,
    sample_rate: u32,
) -> Result<RoomImpulseResponse> {
    synthesize_rir_with(dims, source, mic, rt60, sample_rate, &RirOptions::default())
}

pub fn synthesize_rir_with(
    dims: &[f64; 3],
    source: &Point,
    mic: &Point,
    rt60: f64,
    sample_rate: u32,
    options: &RirOptions,
) -> Result<RoomImpulseResponse> {
    volume_and_surface(dims)?;
    check_inside(dims, source, "source")?;
    check_inside(dims, mic, "microphone")?;
    if sample_rate == 0 {
        return Err(invalid("sample rate must be positive"));
    }
    let d0 = distance(source, mic);
    if d0 < MIN_SOURCE_MIC_DISTANCE {
        return Err(invalid(format!("source and microphone coincide (distance {d0} m)")));
    }
    let alpha = options.alpha(dims, source, mic, rt60)?;
    let beta = (1.0 - alpha).max(0.0).sqrt();
    let fs = f64::from(sample_rate);
    let duration = rt60 + options.tail_margin;
    let radius = SPEED_OF_SOUND * duration;
    let len = (duration * fs).ceil() as usize + KERNEL_HALF_WIDTH + 1;
    let mut taps = vec![0.0; len];
    let tables = KernelTables::default();

    let radius = radius.max(d0);
    let max_order = if beta == 0.0 { 0 } else { order_for_radius(dims, source, mic, radius) };
    // Powers of beta by reflection count.
    let gains: Vec<f64> = (0..=max_order).map(|k| beta.powi(k as i32)).collect();
    for_each_image(dims, source, max_order, Some((mic, radius)), |pos, refl| {
        let g = gains[refl as usize];
        if g == 0.0 {
            return;
        }
        let d = distance(&pos, mic);
        add_delayed_kernel(&mut taps, fs * d / SPEED_OF_SOUND, g / (4.0 * PI * d), &tables);
    });

    if options.highpass_hz > 0.0 {
        if options.highpass_hz >= fs / 2.0 {
            return Err(invalid(format!("high-pass cutoff {} Hz is above Nyquist", options.highpass_hz)));
        }
        highpass_in_place(&mut taps, options.highpass_hz, fs);
    }

    Ok(RoomImpulseResponse {
        sample_rate,
        taps,
        source: *source,
        mic: *mic,
        rt60_target: rt60,
        direct_delay: fs * d0 / SPEED_OF_SOUND,
    })
}
