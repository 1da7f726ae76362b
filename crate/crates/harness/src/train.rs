//! Pretraining, finetuning and evaluation loops.

use arbiter_core::features::{envelope, frame_count, normalize, FeatureMatrix};
use arbiter_core::nn::layers::apply_batch_stats;
use arbiter_core::nn::optim::{accumulate, cosine_lr, scale_grads};
use arbiter_core::nn::{envelope_tensor, feature_tensor, Adam, BatchStats, Model, ModelConfig, ParamId, ParamStore, Tape, Tensor, Var};
use arbiter_core::objectives::{
    combo_loss_graph, contrastive_loss_graph, cross_entropy_graph, make_frame_aligned_split, reconstructive_loss_graph,
    split_features, ObjectiveWeights,
};
use arbiter_core::{derive_seed, rng_from_seed, Rng};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{Setup, TrainConfig};
use crate::data::{LabeledScenario, UnlabeledScenario};
use crate::error::{Error, Result};

const PRETRAIN_INIT: u64 = 0x5052_4549_4e49;
const PRETRAIN_ORDER: u64 = 0x5052_4f52_4452;
const FINETUNE_INIT: u64 = 0x4649_4e49_4e49;
const FINETUNE_ORDER: u64 = 0x4649_4f52_4452;
const VALIDATION: u64 = 0x5641_4c49_4441;

/// Settings shared by the pretraining objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings {
    /// Samples per recording, used to place the contrastive split.
    pub samples: usize,
    pub split_epsilon: f64,
    pub lambda: f64,
}

/// A model with its parameters.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub store: ParamStore,
}

impl Trained {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let (model, store) = Model::new(config, seed)?;
        Ok(Self { model, store })
    }
}

/// Anything that assigns arbitration probabilities to a scenario's
/// unnormalised features.
pub trait Arbiter {
    fn probabilities(&self, features: &[FeatureMatrix]) -> Result<Vec<f64>>;
}

impl Arbiter for Trained {
    fn probabilities(&self, features: &[FeatureMatrix]) -> Result<Vec<f64>> {
        let normed = features.iter().map(normalize).collect::<arbiter_core::Result<Vec<_>>>()?;
        Ok(self.model.arbitrate(&self.store, &normed)?)
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in p.iter().enumerate() {
        if best.is_none_or(|b| v > p[b]) {
            best = Some(i);
        }
    }
    best
}

/// Fraction of scenarios whose most probable device is the labelled one.
pub fn evaluate(arbiter: &impl Arbiter, test: &[LabeledScenario]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty test set".into()));
    }
    let mut correct = 0usize;
    for s in test {
        let p = arbiter.probabilities(&s.features)?;
        if p.len() != s.num_devices() {
            return Err(Error::Invalid(format!(
                "scenario {}: {} probabilities for {} devices",
                s.index,
                p.len(),
                s.num_devices()
            )));
        }
        if argmax(&p) == Some(s.label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean training loss of the steps since the previous point.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

/// Per-step training record; for the combo objective the parts are logged too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub reconstructive: Option<f64>,
    pub contrastive: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation point, rounded to `f32`.
    pub trained: Trained,
    pub best_step: usize,
    pub best_val: f64,
    pub curve: Vec<CurvePoint>,
    pub log: Vec<StepLog>,
}

struct ItemResult {
    loss: f64,
    parts: (Option<f64>, Option<f64>),
    grads: Vec<(ParamId, Tensor)>,
    stats: Vec<BatchStats>,
}

fn tensors(features: &[FeatureMatrix]) -> Result<Vec<Tensor>> {
    features
        .iter()
        .map(|f| Ok(feature_tensor(&normalize(f)?)))
        .collect()
}

/// Objective value for one scenario, plus its reconstructive and contrastive parts.
fn objective(
    t: &mut Tape,
    model: &Model,
    setup: Setup,
    features: &[FeatureMatrix],
    settings: &ObjectiveSettings,
    rng: &mut Rng,
) -> Result<(Var, Option<Var>, Option<Var>)> {
    let contrastive = |t: &mut Tape, rng: &mut Rng| -> Result<Var> {
        let spec = make_frame_aligned_split(settings.samples, settings.split_epsilon, rng)?;
        let mut first = Vec::with_capacity(features.len());
        let mut second = Vec::with_capacity(features.len());
        for f in features {
            if f.frames != frame_count(settings.samples) {
                return Err(Error::Invalid(format!(
                    "recording has {} frames, expected {}",
                    f.frames,
                    frame_count(settings.samples)
                )));
            }
            let (a, b) = split_features(f, &spec)?;
            first.push(t.constant(feature_tensor(&a)));
            second.push(t.constant(feature_tensor(&b)));
        }
        let n = first.len();
        first.extend(second);
        let h = model.encoder.forward(t, &first)?;
        let z = h
            .into_iter()
            .map(|h| model.summarizer.forward(t, h))
            .collect::<arbiter_core::Result<Vec<_>>>()?;
        let za = t.concat_rows(&z[..n]);
        let zb = t.concat_rows(&z[n..]);
        Ok(contrastive_loss_graph(t, za, zb)?)
    };
    let reconstructive = |t: &mut Tape, rng: &mut Rng| -> Result<Var> {
        let mut xs = Vec::with_capacity(features.len());
        let mut envs = Vec::with_capacity(features.len());
        for f in features {
            let nf = normalize(f)?;
            envs.push(t.constant(envelope_tensor(&envelope(&nf))));
            xs.push(t.constant(feature_tensor(&nf)));
        }
        Ok(reconstructive_loss_graph(t, model, &xs, &envs, rng)?)
    };
    match setup {
        Setup::Baseline => Err(Error::Invalid("the baseline has no pretraining objective".into())),
        Setup::Contrastive => {
            let c = contrastive(t, rng)?;
            Ok((c, None, Some(c)))
        }
        Setup::Reconstructive => {
            let r = reconstructive(t, rng)?;
            Ok((r, Some(r), None))
        }
        Setup::Combo => {
            let r = reconstructive(t, rng)?;
            let c = contrastive(t, rng)?;
            let l = combo_loss_graph(t, r, c, ObjectiveWeights { lambda: settings.lambda });
            Ok((l, Some(r), Some(c)))
        }
    }
}

fn classification(t: &mut Tape, model: &Model, s: &LabeledScenario) -> Result<Var> {
    let xs: Vec<Var> = tensors(&s.features)?.into_iter().map(|x| t.constant(x)).collect();
    let h = model.encoder.forward(t, &xs)?;
    let p = model.classifier.forward(t, &h)?;
    Ok(cross_entropy_graph(t, p, s.label)?)
}

fn check_finite(stage: &str, step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            stage: stage.into(),
            step,
            loss,
        })
    }
}

/// Shared optimisation loop: shuffled epochs over `n_items`, gradients
/// accumulated over `batch_size` items per step, validation every
/// `checkpoint_interval` steps and after the last, best parameters kept.
fn optimise(
    stage: &str,
    mut current: Trained,
    config: &TrainConfig,
    n_items: usize,
    order_seed: u64,
    item: impl Fn(&Trained, usize, &mut Rng) -> Result<ItemResult>,
    validate: impl Fn(&Trained) -> Result<f64>,
) -> Result<TrainOutcome> {
    if n_items == 0 {
        return Err(Error::Invalid(format!("{stage}: no training scenarios")));
    }
    let mut rng = rng_from_seed(order_seed);
    let mut opt = Adam::new(config.optimizer.clone(), &current.store);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;

    let init_val = validate(&current)?;
    check_finite(stage, 0, init_val)?;
    let mut best = current.clone();
    let mut best_step = 0;
    let mut best_val = init_val;
    let mut curve = vec![CurvePoint {
        step: 0,
        train_loss: None,
        val_loss: init_val,
    }];
    let mut log = Vec::with_capacity(config.steps);
    let (mut since_sum, mut since_n) = (0.0, 0usize);

    for step in 1..=config.steps {
        let mut grads = Vec::new();
        let (mut loss, mut rsum, mut csum) = (0.0, None::<f64>, None::<f64>);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order = (0..n_items).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let r = item(&current, idx, &mut rng)?;
            check_finite(stage, step, r.loss)?;
            loss += r.loss;
            if let Some(v) = r.parts.0 {
                *rsum.get_or_insert(0.0) += v;
            }
            if let Some(v) = r.parts.1 {
                *csum.get_or_insert(0.0) += v;
            }
            accumulate(&mut grads, r.grads);
            apply_batch_stats(&mut current.store, &r.stats);
        }
        let b = config.batch_size as f64;
        scale_grads(&mut grads, 1.0 / b);
        let o = &config.optimizer;
        let lr = cosine_lr(o.lr, o.min_lr_fraction, step - 1, config.steps);
        let grad_norm = opt.update(&mut current.store, &grads, lr);
        check_finite(stage, step, grad_norm)?;
        log.push(StepLog {
            step,
            lr,
            loss: loss / b,
            reconstructive: rsum.map(|v| v / b),
            contrastive: csum.map(|v| v / b),
            grad_norm,
        });
        since_sum += loss / b;
        since_n += 1;

        if step % config.checkpoint_interval == 0 || step == config.steps {
            let val = validate(&current)?;
            check_finite(stage, step, val)?;
            curve.push(CurvePoint {
                step,
                train_loss: Some(since_sum / since_n as f64),
                val_loss: val,
            });
            since_sum = 0.0;
            since_n = 0;
            if val < best_val {
                best_val = val;
                best_step = step;
                best = current.clone();
            }
        }
    }
    best.store.round_to_f32();
    Ok(TrainOutcome {
        trained: best,
        best_step,
        best_val,
        curve,
        log,
    })
}

fn run_item(
    trained: &Trained,
    training: bool,
    f: impl FnOnce(&mut Tape) -> Result<(Var, Option<Var>, Option<Var>)>,
) -> Result<ItemResult> {
    let mut t = Tape::new(&trained.store, training);
    let (l, r, c) = f(&mut t)?;
    let grads = if training { t.backward(l).param_grads() } else { Vec::new() };
    Ok(ItemResult {
        loss: t.value(l).item(),
        parts: (r.map(|v| t.value(v).item()), c.map(|v| t.value(v).item())),
        grads,
        stats: t.take_batch_stats(),
    })
}

/// Mean pretraining objective over `items` in inference mode. Each item's
/// split point and partners come from its own seed, so repeated
/// validations are comparable.
pub fn pretrain_objective(
    trained: &Trained,
    setup: Setup,
    items: &[UnlabeledScenario<'_>],
    settings: &ObjectiveSettings,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Invalid("empty validation set".into()));
    }
    let mut sum = 0.0;
    for s in items {
        let mut rng = rng_from_seed(derive_seed(s.seed, VALIDATION));
        let r = run_item(trained, false, |t| objective(t, &trained.model, setup, s.features, settings, &mut rng))?;
        sum += r.loss;
    }
    Ok(sum / items.len() as f64)
}

/// Optimises a pretraining objective on unlabelled scenarios and returns the
/// parameters with the lowest validation objective.
pub fn pretrain(
    setup: Setup,
    model: &ModelConfig,
    train: &[UnlabeledScenario<'_>],
    val: &[UnlabeledScenario<'_>],
    config: &TrainConfig,
    settings: &ObjectiveSettings,
    seed: u64,
) -> Result<TrainOutcome> {
    if !setup.is_pretrained() {
        return Err(Error::Invalid("the baseline is not pretrained".into()));
    }
    let init = Trained::new(model, derive_seed(seed, PRETRAIN_INIT))?;
    optimise(
        &format!("{setup} pretraining"),
        init,
        config,
        train.len(),
        derive_seed(seed, PRETRAIN_ORDER),
        |tr, i, rng| run_item(tr, true, |t| objective(t, &tr.model, setup, train[i].features, settings, rng)),
        |tr| pretrain_objective(tr, setup, val, settings),
    )
}

/// Mean cross-entropy over `items` in inference mode.
pub fn classification_loss(trained: &Trained, items: &[&LabeledScenario]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Invalid("empty validation set".into()));
    }
    let mut sum = 0.0;
    for s in items {
        sum += run_item(trained, false, |t| Ok((classification(t, &trained.model, s)?, None, None)))?.loss;
    }
    Ok(sum / items.len() as f64)
}

/// Trains encoder and classifier end to end on labelled scenarios. With
/// `init`, the encoder starts from its `encoder.` parameters (including
/// batch-norm statistics); everything else is freshly initialised.
pub fn finetune(
    init: Option<&ParamStore>,
    model: &ModelConfig,
    train: &[&LabeledScenario],
    val: &[&LabeledScenario],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut start = Trained::new(model, derive_seed(seed, FINETUNE_INIT))?;
    if let Some(src) = init {
        let expected = start.store.entries().iter().filter(|e| e.name.starts_with("encoder.")).count();
        let copied = start.store.copy_prefix_from(src, "encoder.");
        if copied != expected {
            return Err(Error::Invalid(format!(
                "pretrained checkpoint supplies {copied} of {expected} encoder tensors"
            )));
        }
    }
    optimise(
        "finetuning",
        start,
        config,
        train.len(),
        derive_seed(seed, FINETUNE_ORDER),
        |tr, i, _| run_item(tr, true, |t| Ok((classification(t, &tr.model, train[i])?, None, None))),
        |tr| classification_loss(tr, val),
    )
}
