//! Pretraining and supervised objectives plus the relative error rate metric.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{bad_config, invalid, Error, Result};
use crate::features::{frame_count, normalize, FeatureMatrix, FRAME_SIZE, HOP};
use crate::nn::{Model, Tape, Tensor, Var};
use crate::Rng;

/// Largest tolerated deviation of an embedding norm from one.
pub const UNIT_TOLERANCE: f64 = 1e-3;
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_EPSILON: f64 = 0.05;

fn check_unit(z: &[Vec<f64>], which: &str) -> Result<()> {
    for (i, v) in z.iter().enumerate() {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(invalid(format!("{which}[{i}] has norm {n}, expected 1")));
        }
    }
    Ok(())
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Contrastive loss between first-half embeddings `za` and second-half
/// embeddings `zb` of the same N recordings.
///
/// Cross terms pull matching halves together and push other devices towards
/// orthogonality; within-half terms push different devices apart.
pub fn contrastive_loss(za: &[Vec<f64>], zb: &[Vec<f64>]) -> Result<f64> {
    let n = za.len();
    if n == 0 || zb.len() != n {
        return Err(invalid(format!("need equal, nonzero embedding counts, got {} and {}", n, zb.len())));
    }
    let d = za[0].len();
    if za.iter().chain(zb).any(|v| v.len() != d) {
        return Err(Error::Shape("embeddings differ in dimension".into()));
    }
    check_unit(za, "za")?;
    check_unit(zb, "zb")?;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            l1 += (inner(&za[i], &zb[j]) - target).abs();
            if i != j {
                l2 += inner(&za[i], &za[j]).abs() + inner(&zb[i], &zb[j]).abs();
            }
        }
    }
    Ok(l1 + l2)
}

/// Differentiable contrastive loss on `[N, D]` embedding matrices whose rows
/// are unit vectors.
pub fn contrastive_loss_graph(t: &mut Tape, za: Var, zb: Var) -> Result<Var> {
    let (n, d) = t.shape(za);
    if n == 0 || t.shape(zb) != (n, d) {
        return Err(Error::Shape(format!("contrastive operands {:?} and {:?}", t.shape(za), t.shape(zb))));
    }
    for v in [za, zb] {
        let m = t.value(v);
        for r in 0..n {
            let norm = m.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(invalid(format!("embedding row {r} has norm {norm}")));
            }
        }
    }
    let mut eye = Tensor::zeros(n, n);
    let mut off = Tensor::full(n, n, 1.0);
    for i in 0..n {
        eye.data[i * n + i] = 1.0;
        off.data[i * n + i] = 0.0;
    }
    let eye = t.constant(eye);
    let off = t.constant(off);

    let cross = t.matmul_nt(za, zb);
    let cross = t.sub(cross, eye);
    let cross = t.abs(cross);
    let l1 = t.sum(cross);

    let aa = t.matmul_nt(za, za);
    let aa = t.mul(aa, off);
    let aa = t.abs(aa);
    let bb = t.matmul_nt(zb, zb);
    let bb = t.mul(bb, off);
    let bb = t.abs(bb);
    let l2 = t.add(aa, bb);
    let l2 = t.sum(l2);
    Ok(t.add(l1, l2))
}

/// Where to cut a length-`total` recording into two halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub total: usize,
    pub t_split: usize,
    pub epsilon: f64,
}

impl SplitSpec {
    pub fn check(&self) -> Result<()> {
        let half = self.total as f64 / 2.0;
        let jitter = self.epsilon * self.total as f64;
        let t = self.t_split as f64;
        let inside = if self.epsilon == 0.0 {
            self.t_split == self.total / 2
        } else {
            t > half - jitter && t < half + jitter
        };
        if !inside || self.t_split == 0 || self.t_split >= self.total {
            return Err(invalid(format!("split {} outside jitter window of {}", self.t_split, self.total)));
        }
        Ok(())
    }
}

fn split_bounds(total: usize, epsilon: f64) -> Result<(f64, f64)> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(bad_config(format!("split jitter {epsilon} outside [0, 0.5)")));
    }
    if total < 2 * FRAME_SIZE {
        return Err(invalid(format!("{total} samples is too short to split; need {}", 2 * FRAME_SIZE)));
    }
    let half = total as f64 / 2.0;
    let jitter = epsilon * total as f64;
    Ok((half - jitter, half + jitter))
}

/// Draws a split point uniformly from the integers strictly inside
/// `(T/2 - eps*T, T/2 + eps*T)`; `eps = 0` gives `T/2`.
pub fn make_split(total: usize, epsilon: f64, rng: &mut Rng) -> Result<SplitSpec> {
    let (lo, hi) = split_bounds(total, epsilon)?;
    let lo_i = lo.floor() as usize + 1;
    let hi_i = hi.ceil() as usize - 1;
    let t_split = if epsilon == 0.0 || lo_i > hi_i {
        total / 2
    } else {
        rng.random_range(lo_i..=hi_i)
    };
    Ok(SplitSpec {
        total,
        t_split,
        epsilon,
    })
}

/// Like [`make_split`] but restricted to multiples of the feature hop, so the
/// LFBE of each half is a row range of the LFBE of the whole recording.
pub fn make_frame_aligned_split(total: usize, epsilon: f64, rng: &mut Rng) -> Result<SplitSpec> {
    let (lo, hi) = split_bounds(total, epsilon)?;
    if epsilon == 0.0 {
        let spec = SplitSpec {
            total,
            t_split: total / 2,
            epsilon,
        };
        return Ok(spec);
    }
    let first = (lo / HOP as f64).floor() as usize + 1;
    let last = (hi / HOP as f64).ceil() as usize - 1;
    if first > last {
        return Err(invalid(format!("no hop-aligned split inside ({lo}, {hi})")));
    }
    let t_split = rng.random_range(first..=last) * HOP;
    Ok(SplitSpec {
        total,
        t_split,
        epsilon,
    })
}

/// `(x[..t_split], x[t_split..])`.
pub fn split_waveform<'a>(x: &'a [f64], spec: &SplitSpec) -> Result<(&'a [f64], &'a [f64])> {
    if x.len() != spec.total {
        return Err(Error::Shape(format!("recording has {} samples, split expects {}", x.len(), spec.total)));
    }
    Ok(x.split_at(spec.t_split))
}

/// Normalised LFBE of both halves, cut from the unnormalised LFBE of the
/// whole recording. Requires a hop-aligned split.
pub fn split_features(full: &FeatureMatrix, spec: &SplitSpec) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if full.normalized {
        return Err(invalid("split_features needs unnormalised features"));
    }
    if spec.t_split % HOP != 0 {
        return Err(invalid(format!("split {} is not a multiple of the hop", spec.t_split)));
    }
    if full.frames != frame_count(spec.total) {
        return Err(Error::Shape(format!(
            "{} frames do not belong to a {}-sample recording",
            full.frames, spec.total
        )));
    }
    let n1 = frame_count(spec.t_split);
    let start2 = spec.t_split / HOP;
    let a = full.slice_frames(0, n1)?;
    let b = full.slice_frames(start2, full.frames)?;
    Ok((normalize(&a)?, normalize(&b)?))
}

/// The networks the reconstruction objective needs.
pub trait ReconstructionNets {
    /// Unit-norm acoustic embeddings `[1, D]` for a batch of recordings.
    fn acoustic(&self, t: &mut Tape, feats: &[Var]) -> Result<Vec<Var>>;
    /// Per-frame speech content `[frames, D]`.
    fn speech(&self, t: &mut Tape, feats: Var) -> Result<Var>;
    /// Reconstructed `[frames, 64]` features.
    fn decode(&self, t: &mut Tape, speech: Var, z: Var, env: Var) -> Result<Var>;
}

impl ReconstructionNets for Model {
    fn acoustic(&self, t: &mut Tape, feats: &[Var]) -> Result<Vec<Var>> {
        let h = self.encoder.forward(t, feats)?;
        h.into_iter().map(|h| self.summarizer.forward(t, h)).collect()
    }

    fn speech(&self, t: &mut Tape, feats: Var) -> Result<Var> {
        self.speech.forward(t, feats)
    }

    fn decode(&self, t: &mut Tape, speech: Var, z: Var, env: Var) -> Result<Var> {
        self.decoder.forward(t, speech, z, env)
    }
}

/// For each of `n` devices, a partner index drawn uniformly from the others.
pub fn draw_partners(n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(invalid(format!("reconstruction needs at least two devices, got {n}")));
    }
    Ok((0..n)
        .map(|i| {
            let j = rng.random_range(0..n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect())
}

/// Reconstruction loss for one scenario: the mean over devices of the
/// per-element squared error between each recording's features and the
/// decoder output built from a partner's speech content, the recording's own
/// acoustic embedding and its own envelope. Partners are drawn from `rng`.
pub fn reconstructive_loss_graph<M: ReconstructionNets + ?Sized>(
    t: &mut Tape,
    nets: &M,
    feats: &[Var],
    envs: &[Var],
    rng: &mut Rng,
) -> Result<Var> {
    let partners = draw_partners(feats.len(), rng)?;
    reconstructive_loss_with_partners(t, nets, feats, envs, &partners)
}

/// [`reconstructive_loss_graph`] with explicit partner indices.
pub fn reconstructive_loss_with_partners<M: ReconstructionNets + ?Sized>(
    t: &mut Tape,
    nets: &M,
    feats: &[Var],
    envs: &[Var],
    partners: &[usize],
) -> Result<Var> {
    let n = feats.len();
    if n < 2 {
        return Err(invalid(format!("reconstruction needs at least two devices, got {n}")));
    }
    if envs.len() != n || partners.len() != n {
        return Err(Error::Shape("one envelope and one partner per recording required".into()));
    }
    if partners.iter().enumerate().any(|(i, &j)| j == i || j >= n) {
        return Err(invalid(format!("invalid partner assignment {partners:?}")));
    }
    let z = nets.acoustic(t, feats)?;
    let speech: Vec<Var> = feats.iter().map(|&f| nets.speech(t, f)).collect::<Result<_>>()?;
    let mut terms = Vec::with_capacity(n);
    for (i, &j) in partners.iter().enumerate() {
        let r = nets.decode(t, speech[j], z[i], envs[i])?;
        if t.shape(r) != t.shape(feats[i]) {
            return Err(Error::Shape(format!(
                "reconstruction {:?} vs target {:?}",
                t.shape(r),
                t.shape(feats[i])
            )));
        }
        let e = t.sub(feats[i], r);
        let e = t.mul(e, e);
        terms.push(t.mean(e));
    }
    let total = terms[1..].iter().fold(terms[0], |acc, &x| t.add(acc, x));
    Ok(t.scale(total, 1.0 / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { lambda: 0.5 }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(bad_config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

pub fn combo_loss(l_r: f64, l_c: f64, w: ObjectiveWeights) -> f64 {
    w.lambda * l_r + (1.0 - w.lambda) * l_c
}

pub fn combo_loss_graph(t: &mut Tape, l_r: Var, l_c: Var, w: ObjectiveWeights) -> Var {
    let a = t.scale(l_r, w.lambda);
    let b = t.scale(l_c, 1.0 - w.lambda);
    t.add(a, b)
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs
        .get(label)
        .ok_or_else(|| invalid(format!("label {label} out of range for {} devices", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Cross-entropy of a `[1, N]` probability row.
pub fn cross_entropy_graph(t: &mut Tape, probs: Var, label: usize) -> Result<Var> {
    let (rows, n) = t.shape(probs);
    if rows != 1 || label >= n {
        return Err(invalid(format!("label {label} out of range for probabilities {rows}x{n}")));
    }
    let p = t.pick(probs, 0, label);
    let l = t.ln_floor(p, PROB_FLOOR);
    Ok(t.scale(l, -1.0))
}

/// `(1 - acc) / (1 - acc_base)`.
pub fn relative_error_rate(acc: f64, acc_base: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&acc) || !(0.0..=1.0).contains(&acc_base) {
        return Err(invalid(format!("accuracies must lie in [0, 1], got {acc} and {acc_base}")));
    }
    if acc_base == 1.0 {
        return Err(invalid("baseline accuracy is 1; relative error rate is undefined"));
    }
    Ok((1.0 - acc) / (1.0 - acc_base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn e(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn contrastive_fixed_points() {
        assert_eq!(contrastive_loss(&[e(3, 0)], &[e(3, 0)]).unwrap(), 0.0);
        let z = vec![e(3, 0), e(3, 1)];
        assert_eq!(contrastive_loss(&z, &z).unwrap(), 0.0);
        let same = vec![e(3, 2), e(3, 2)];
        assert_eq!(contrastive_loss(&same, &same).unwrap(), 6.0);
        assert!(contrastive_loss(&[vec![1.1, 0.0]], &[e(2, 0)]).is_err());
    }

    #[test]
    fn split_bounds_and_partition() {
        let mut rng = rng_from_seed(1);
        assert_eq!(make_split(32000, 0.0, &mut rng).unwrap().t_split, 16000);
        for _ in 0..10_000 {
            let s = make_split(32000, 0.05, &mut rng).unwrap();
            assert!(s.t_split > 14400 && s.t_split < 17600);
            s.check().unwrap();
        }
        let x: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let s = make_split(1000, 0.05, &mut rng).unwrap();
        let (a, b) = split_waveform(&x, &s).unwrap();
        assert_eq!([a, b].concat(), x);
        assert!(make_split(799, 0.05, &mut rng).is_err());
    }

    #[test]
    fn aligned_split_is_hop_multiple() {
        let mut rng = rng_from_seed(2);
        for _ in 0..1000 {
            let s = make_frame_aligned_split(32000, 0.05, &mut rng).unwrap();
            assert_eq!(s.t_split % HOP, 0);
            s.check().unwrap();
        }
    }

    #[test]
    fn partners_differ_from_self() {
        let mut rng = rng_from_seed(3);
        for n in 2..6 {
            for _ in 0..100 {
                let p = draw_partners(n, &mut rng).unwrap();
                assert!(p.iter().enumerate().all(|(i, &j)| i != j && j < n));
            }
        }
        assert!(draw_partners(1, &mut rng).is_err());
    }

    #[test]
    fn scalar_losses() {
        assert_eq!(combo_loss(2.0, 4.0, ObjectiveWeights { lambda: 0.5 }), 3.0);
        assert_eq!(combo_loss(2.0, 4.0, ObjectiveWeights { lambda: 1.0 }), 2.0);
        assert_eq!(combo_loss(2.0, 4.0, ObjectiveWeights { lambda: 0.0 }), 4.0);
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((cross_entropy(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(cross_entropy(&[1.0, 0.0], 1).unwrap(), -(1e-12f64).ln());
        assert!(cross_entropy(&[1.0], 1).is_err());
        assert_eq!(relative_error_rate(0.8, 0.8).unwrap(), 1.0);
        assert_eq!(relative_error_rate(1.0, 0.8).unwrap(), 0.0);
        assert!((relative_error_rate(0.9, 0.8).unwrap() - 0.5).abs() < 1e-15);
        assert!(relative_error_rate(0.5, 1.0).is_err());
    }
}
