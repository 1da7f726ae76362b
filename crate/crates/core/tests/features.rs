use arbiter_core::features::{envelope, frame_count, lfbe, lfbe_samples, normalize, FeatureMatrix, NUM_BINS};
use arbiter_core::objectives::{make_frame_aligned_split, split_features};
use arbiter_core::rng_from_seed;
use arbiter_core::synth::{synthetic_speech, Waveform};
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;

/// Straight-line LFBE: O(N^2) DFT and dense triangular mel filters.
fn oracle_lfbe(x: &[f64]) -> Vec<Vec<f64>> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let edges: Vec<f64> = (0..66).map(|i| inv(mel(8000.0) * i as f64 / 65.0)).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + 400 <= x.len() {
        let frame: Vec<f64> = (0..400)
            .map(|n| x[start + n] * (0.5 - 0.5 * (2.0 * PI * n as f64 / 400.0).cos()))
            .collect();
        let power: Vec<f64> = (0..=256)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * n) as f64 / 512.0;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect();
        let row = (0..64)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let e: f64 = (0..=256)
                    .map(|k| {
                        let f = k as f64 * 16000.0 / 512.0;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        w * power[k]
                    })
                    .sum();
                e.max(1e-10).ln()
            })
            .collect();
        out.push(row);
        start += 160;
    }
    out
}

#[test]
fn lfbe_matches_straight_line_oracle() {
    let mut rng = rng_from_seed(3);
    let x: Vec<f64> = (0..1200).map(|_| rng.random_range(-0.5..0.5)).collect();
    let f = lfbe_samples(&x).unwrap();
    let o = oracle_lfbe(&x);
    assert_eq!(f.frames, o.len());
    for (t, row) in o.iter().enumerate() {
        for (q, v) in row.iter().enumerate() {
            assert!((f.get(t, q) as f64 - v).abs() < 1e-4, "frame {t} bin {q}");
        }
    }
}

#[test]
fn frame_count_closed_form_on_random_lengths() {
    let mut rng = rng_from_seed(4);
    for _ in 0..1000 {
        let n = rng.random_range(0..100_000usize);
        let mut count = 0;
        while count * 160 + 400 <= n {
            count += 1;
        }
        assert_eq!(frame_count(n), count, "n = {n}");
    }
    assert_eq!(frame_count(32_000), 198);
}

#[test]
fn two_second_input_and_silence() {
    let f = lfbe(&Waveform::new(vec![0.0; 32_000], 16_000).unwrap()).unwrap();
    assert_eq!(f.frames, 198);
    let floor = (1e-10f64).ln() as f32;
    assert!(f.values.iter().all(|&v| v == floor));
}

#[test]
fn envelope_matches_straight_line_mean() {
    let mut rng = rng_from_seed(5);
    let speech = synthetic_speech(1.0, 16_000, &mut rng).unwrap();
    for f in [lfbe(&speech).unwrap(), normalize(&lfbe(&speech).unwrap()).unwrap()] {
        let env = envelope(&f);
        assert_eq!(env.values.len(), f.frames);
        for t in 0..f.frames {
            let mut s = 0.0;
            for q in 0..NUM_BINS {
                s += f.get(t, q) as f64;
            }
            assert!((env.values[t] - s / 64.0).abs() < 1e-9);
        }
    }
}

#[test]
fn hop_shift_shifts_frames() {
    let mut rng = rng_from_seed(6);
    let x: Vec<f64> = (0..8000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let full = lfbe_samples(&x).unwrap();
    for k in [1usize, 3, 10] {
        let shifted = lfbe_samples(&x[160 * k..]).unwrap();
        assert_eq!(shifted.frames, full.frames - k);
        assert_eq!(shifted.values[..], full.values[k * NUM_BINS..]);
    }
}

#[test]
fn aligned_split_features_equal_features_of_the_halves() {
    let mut rng = rng_from_seed(7);
    let x = synthetic_speech(2.0, 16_000, &mut rng).unwrap();
    let full = lfbe(&x).unwrap();
    for _ in 0..5 {
        let spec = make_frame_aligned_split(32_000, 0.05, &mut rng).unwrap();
        let (a, b) = split_features(&full, &spec).unwrap();
        let a_ref = normalize(&lfbe_samples(&x.samples[..spec.t_split]).unwrap()).unwrap();
        let b_ref = normalize(&lfbe_samples(&x.samples[spec.t_split..]).unwrap()).unwrap();
        assert_eq!(a, a_ref);
        assert_eq!(b, b_ref);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalised_bins_have_zero_mean_unit_variance(
        seed in any::<u64>(),
        frames in 2usize..40,
    ) {
        let mut rng = rng_from_seed(seed);
        let values: Vec<f32> = (0..frames * NUM_BINS).map(|_| rng.random_range(-20.0f32..5.0)).collect();
        let f = FeatureMatrix::new(frames, values, false).unwrap();
        let n = normalize(&f).unwrap();
        prop_assert!(n.normalized);
        for q in 0..NUM_BINS {
            let col: Vec<f64> = (0..frames).map(|t| n.get(t, q) as f64).collect();
            let mean = col.iter().sum::<f64>() / frames as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frames as f64;
            prop_assert!(mean.abs() < 1e-4);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn frame_count_shape(len in 400usize..20_000) {
        let x = vec![0.01; len];
        let f = lfbe_samples(&x).unwrap();
        prop_assert_eq!(f.frames, 1 + (len - 400) / 160);
        prop_assert_eq!(f.values.len(), f.frames * NUM_BINS);
    }
}
