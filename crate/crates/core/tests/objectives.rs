use arbiter_core::nn::graph::{Tape, Var};
use arbiter_core::nn::{Model, ModelConfig, Tensor};
use arbiter_core::objectives::{
    combo_loss, contrastive_loss, contrastive_loss_graph, cross_entropy, reconstructive_loss_graph,
    reconstructive_loss_with_partners, relative_error_rate, ObjectiveWeights, ReconstructionNets,
};
use arbiter_core::{rng_from_seed, Result, Rng};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn unit_vectors(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Naive double loop over both loss terms, written independently.
fn naive_contrastive(za: &[Vec<f64>], zb: &[Vec<f64>]) -> f64 {
    let dot = |a: &Vec<f64>, b: &Vec<f64>| -> f64 {
        let mut s = 0.0;
        for k in 0..a.len() {
            s += a[k] * b[k];
        }
        s
    };
    let n = za.len();
    let mut l1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            l1 += (dot(&za[i], &zb[j]) - delta).abs();
        }
    }
    let mut l2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if j != i {
                l2 += dot(&za[i], &za[j]).abs() + dot(&zb[i], &zb[j]).abs();
            }
        }
    }
    l1 + l2
}

fn graph_contrastive(za: &[Vec<f64>], zb: &[Vec<f64>]) -> f64 {
    let store = arbiter_core::nn::ParamStore::new();
    let mut t = Tape::new(&store, false);
    let (n, d) = (za.len(), za[0].len());
    let a = t.constant(Tensor::from_vec(n, d, za.concat()));
    let b = t.constant(Tensor::from_vec(n, d, zb.concat()));
    let l = contrastive_loss_graph(&mut t, a, b).unwrap();
    t.value(l).item()
}

#[test]
fn contrastive_matches_naive_oracle() {
    let mut rng = rng_from_seed(1);
    for case in 0..100 {
        let n = rng.random_range(1..6);
        let d = rng.random_range(2..16);
        let za = unit_vectors(n, d, &mut rng);
        let zb = unit_vectors(n, d, &mut rng);
        let oracle = naive_contrastive(&za, &zb);
        assert!((contrastive_loss(&za, &zb).unwrap() - oracle).abs() < 1e-6, "case {case}");
        assert!((graph_contrastive(&za, &zb) - oracle).abs() < 1e-6, "case {case}");
    }
}

#[test]
fn contrastive_all_identical_pair_is_six() {
    let v = vec![0.6, 0.8, 0.0];
    let z = vec![v.clone(), v];
    assert_eq!(contrastive_loss(&z, &z).unwrap(), 6.0);
    assert_eq!(graph_contrastive(&z, &z), 6.0);
}

#[test]
fn contrastive_rejects_non_unit_and_mismatched_inputs() {
    assert!(contrastive_loss(&[vec![1.01, 0.0]], &[vec![1.0, 0.0]]).is_err());
    assert!(contrastive_loss(&[vec![1.0005, 0.0]], &[vec![1.0, 0.0]]).is_ok());
    assert!(contrastive_loss(&[], &[]).is_err());
    assert!(contrastive_loss(&[vec![1.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
}

#[test]
fn eq8_substitutions() {
    assert_eq!(relative_error_rate(0.8, 0.8).unwrap(), 1.0);
    assert_eq!(relative_error_rate(1.0, 0.8).unwrap(), 0.0);
    assert_eq!(relative_error_rate(0.9, 0.8).unwrap(), (1.0 - 0.9) / (1.0 - 0.8));
    assert!((relative_error_rate(0.9, 0.8).unwrap() - 0.5).abs() < 1e-15);
    assert!(relative_error_rate(0.3, 1.0).is_err());
    assert!(relative_error_rate(1.2, 0.5).is_err());
}

#[test]
fn cross_entropy_examples() {
    assert_eq!(cross_entropy(&[0.0, 0.0, 1.0], 2).unwrap(), 0.0);
    assert!((cross_entropy(&[0.25; 4], 3).unwrap() - 1.386_294_361_119_890_6).abs() < 1e-12);
    let floor = cross_entropy(&[1.0, 0.0], 1).unwrap();
    assert!(floor.is_finite() && floor == -(1e-12f64).ln());
    assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
}

#[test]
fn combo_weights() {
    assert_eq!(combo_loss(2.0, 4.0, ObjectiveWeights::default()), 3.0);
    assert_eq!(combo_loss(2.5, 4.0, ObjectiveWeights { lambda: 1.0 }), 2.5);
    assert_eq!(combo_loss(2.5, 4.0, ObjectiveWeights { lambda: 0.0 }), 4.0);
    assert!(ObjectiveWeights { lambda: 1.5 }.validate().is_err());
}

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn mean_envelope(f: &Tensor) -> Tensor {
    Tensor::from_vec(f.rows, 1, (0..f.rows).map(|r| f.row(r).iter().sum::<f64>() / 64.0).collect())
}

/// Straight-line reconstruction loss: partners replayed from the same seed,
/// networks evaluated one recording at a time, squared error summed by hand.
fn oracle_reconstruction(m: &Model, store: &arbiter_core::nn::ParamStore, feats: &[Tensor], seed: u64) -> f64 {
    let n = feats.len();
    let mut rng = rng_from_seed(seed);
    let partners: Vec<usize> = (0..n)
        .map(|i| {
            let j = rng.random_range(0..n - 1);
            if j < i {
                j
            } else {
                j + 1
            }
        })
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut t = Tape::new(store, false);
        let fi = t.constant(feats[i].clone());
        let fj = t.constant(feats[partners[i]].clone());
        let h = m.encoder.forward(&mut t, &[fi]).unwrap();
        let z = m.summarizer.forward(&mut t, h[0]).unwrap();
        let s = m.speech.forward(&mut t, fj).unwrap();
        let env = t.constant(mean_envelope(&feats[i]));
        let r = m.decoder.forward(&mut t, s, z, env).unwrap();
        let r = t.value(r);
        let mut se = 0.0;
        for k in 0..r.len() {
            se += (feats[i].data[k] - r.data[k]).powi(2);
        }
        total += se / r.len() as f64;
    }
    total / n as f64
}

fn graph_reconstruction(m: &Model, store: &arbiter_core::nn::ParamStore, feats: &[Tensor], seed: u64) -> f64 {
    let mut t = Tape::new(store, false);
    let f: Vec<Var> = feats.iter().map(|x| t.constant(x.clone())).collect();
    let e: Vec<Var> = feats.iter().map(|x| t.constant(mean_envelope(x))).collect();
    let l = reconstructive_loss_graph(&mut t, m, &f, &e, &mut rng_from_seed(seed)).unwrap();
    t.value(l).item()
}

#[test]
fn reconstruction_matches_straight_line_oracle() {
    let (m, store) = Model::new(&ModelConfig::tiny(), 3).unwrap();
    let mut rng = rng_from_seed(4);
    for n in 2..5 {
        let feats: Vec<Tensor> = (0..n).map(|_| random(5, 64, &mut rng)).collect();
        for seed in 0..3 {
            let a = graph_reconstruction(&m, &store, &feats, seed);
            let b = oracle_reconstruction(&m, &store, &feats, seed);
            assert!(a >= 0.0);
            assert!((a - b).abs() < 1e-6, "n={n} seed={seed}: {a} vs {b}");
        }
    }
}

#[test]
fn reconstruction_is_invariant_to_device_order() {
    let (m, store) = Model::new(&ModelConfig::tiny(), 5).unwrap();
    let mut rng = rng_from_seed(6);
    let feats: Vec<Tensor> = (0..4).map(|_| random(5, 64, &mut rng)).collect();
    let partners = [2usize, 0, 3, 1];
    let perm = [3usize, 1, 0, 2]; // new position k holds old device perm[k]
    let mut inv = [0usize; 4];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    let permuted: Vec<Tensor> = perm.iter().map(|&p| feats[p].clone()).collect();
    let permuted_partners: Vec<usize> = perm.iter().map(|&p| inv[partners[p]]).collect();
    let eval = |fs: &[Tensor], ps: &[usize]| {
        let mut t = Tape::new(&store, false);
        let f: Vec<Var> = fs.iter().map(|x| t.constant(x.clone())).collect();
        let e: Vec<Var> = fs.iter().map(|x| t.constant(mean_envelope(x))).collect();
        let l = reconstructive_loss_with_partners(&mut t, &m, &f, &e, ps).unwrap();
        t.value(l).item()
    };
    let a = eval(&feats, &partners);
    let b = eval(&permuted, &permuted_partners);
    assert!((a - b).abs() < 1e-9);
    assert!(reconstructive_loss_with_partners(
        &mut Tape::new(&store, false),
        &m,
        &[],
        &[],
        &[]
    )
    .is_err());
}

/// Reconstructs each recording perfectly: the embedding carries the device
/// index and the decoder returns that device's features.
struct Perfect {
    targets: Vec<Tensor>,
}

impl ReconstructionNets for Perfect {
    fn acoustic(&self, t: &mut Tape, feats: &[Var]) -> Result<Vec<Var>> {
        Ok((0..feats.len()).map(|i| t.constant(Tensor::scalar(i as f64))).collect())
    }
    fn speech(&self, _t: &mut Tape, feats: Var) -> Result<Var> {
        Ok(feats)
    }
    fn decode(&self, t: &mut Tape, _speech: Var, z: Var, _env: Var) -> Result<Var> {
        let i = t.value(z).item() as usize;
        Ok(t.constant(self.targets[i].clone()))
    }
}

#[test]
fn perfect_decoder_gives_zero_loss() {
    let mut rng = rng_from_seed(8);
    let targets: Vec<Tensor> = (0..3).map(|_| random(4, 64, &mut rng)).collect();
    let nets = Perfect {
        targets: targets.clone(),
    };
    let store = arbiter_core::nn::ParamStore::new();
    let mut t = Tape::new(&store, false);
    let f: Vec<Var> = targets.iter().map(|x| t.constant(x.clone())).collect();
    let e: Vec<Var> = targets.iter().map(|x| t.constant(mean_envelope(x))).collect();
    let l = reconstructive_loss_graph(&mut t, &nets, &f, &e, &mut rng).unwrap();
    assert_eq!(t.value(l).item(), 0.0);
    assert!(reconstructive_loss_graph(&mut t, &nets, &f[..1], &e[..1], &mut rng).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn contrastive_is_bounded_and_permutation_symmetric(seed in any::<u64>(), n in 1usize..7, d in 2usize..10) {
        let mut rng = rng_from_seed(seed);
        let za = unit_vectors(n, d, &mut rng);
        let zb = unit_vectors(n, d, &mut rng);
        let l = contrastive_loss(&za, &zb).unwrap();
        let nf = n as f64;
        prop_assert!(l >= 0.0);
        prop_assert!(l <= 2.0 * nf * nf + 2.0 * nf * (nf - 1.0));
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pa: Vec<Vec<f64>> = perm.iter().map(|&p| za[p].clone()).collect();
        let pb: Vec<Vec<f64>> = perm.iter().map(|&p| zb[p].clone()).collect();
        prop_assert!((contrastive_loss(&pa, &pb).unwrap() - l).abs() < 1e-9);
    }
}
