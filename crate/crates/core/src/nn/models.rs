use serde::{Deserialize, Serialize};

use super::graph::{Tape, Var};
use super::layers::{positional_encoding, BatchNorm1d, Conv1d, LayerNorm, Linear, TransformerLayer};
use super::params::{small_normal, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{bad_config, invalid, Error, Result};
use crate::features::{Envelope, FeatureMatrix, NUM_BINS};
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub conv_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    pub total_stride: usize,
    pub embedding_dim: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            conv_layers: 6,
            channels: 64,
            kernel: 3,
            total_stride: 8,
            embedding_dim: 64,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Eighteen convolutional layers, as deep as the largest published encoder.
    /// Widths are a guess.
    pub fn paper_scale() -> Self {
        Self {
            conv_layers: 18,
            channels: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_layers < 2 || self.conv_layers % 2 != 0 {
            return Err(bad_config(format!("conv_layers must be even and >= 2, got {}", self.conv_layers)));
        }
        if !self.total_stride.is_power_of_two() {
            return Err(bad_config(format!("total_stride must be a power of two, got {}", self.total_stride)));
        }
        if (self.total_stride.trailing_zeros() as usize) > self.conv_layers {
            return Err(bad_config("not enough conv layers to reach the total stride"));
        }
        if self.kernel % 2 == 0 || self.channels == 0 || self.embedding_dim == 0 {
            return Err(bad_config("kernel must be odd; channels and embedding_dim positive"));
        }
        if !(self.bn_eps > 0.0 && (0.0..=1.0).contains(&self.bn_momentum)) {
            return Err(bad_config("invalid batch-norm eps or momentum"));
        }
        Ok(())
    }

    /// Length of the hidden sequence for `frames` input frames.
    pub fn hidden_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.total_stride)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            ffn_dim: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub transformer: TransformerConfig,
    /// Classifier stage-1 positional encodings over the device concatenation.
    pub classifier_positional: bool,
    /// Positional encodings on the speech encoder input.
    pub speech_positional: bool,
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            transformer: TransformerConfig::default(),
            classifier_positional: true,
            speech_positional: true,
            head_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let t = &self.transformer;
        if t.heads == 0 || self.encoder.embedding_dim % t.heads != 0 {
            return Err(bad_config("embedding_dim must be divisible by the head count"));
        }
        if t.ffn_dim == 0 || self.head_hidden == 0 {
            return Err(bad_config("ffn_dim and head_hidden must be positive"));
        }
        Ok(())
    }

    /// A very small configuration (D=8) for gradient checks.
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig {
                conv_layers: 2,
                channels: 4,
                kernel: 3,
                total_stride: 2,
                embedding_dim: 8,
                ..EncoderConfig::default()
            },
            transformer: TransformerConfig {
                layers: 2,
                heads: 2,
                ffn_dim: 8,
            },
            classifier_positional: true,
            speech_positional: true,
            head_hidden: 6,
        }
    }
}

/// A `[frames, 64]` tensor from a feature matrix.
pub fn feature_tensor(f: &FeatureMatrix) -> Tensor {
    Tensor::from_vec(f.frames, NUM_BINS, f.values.iter().map(|&v| v as f64).collect())
}

pub fn envelope_tensor(e: &Envelope) -> Tensor {
    Tensor::from_vec(e.values.len(), 1, e.values.clone())
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    conv1: Conv1d,
    bn1: BatchNorm1d,
    conv2: Conv1d,
    bn2: BatchNorm1d,
    shortcut: Option<(Conv1d, BatchNorm1d)>,
}

/// Residual convolutional encoder: `[frames, 64]` -> `[ceil(frames / stride), D]`.
#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<ResidualBlock>,
    proj: Linear,
    pub config: EncoderConfig,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, name: &str, config: &EncoderConfig, rng: &mut Rng) -> Self {
        let c = config.channels;
        let n_blocks = config.conv_layers / 2;
        let strided = config.total_stride.trailing_zeros() as usize;
        // Stride-2 layers go first into the leading conv of each block, then
        // into the second conv, so downsampling happens as early as possible.
        let layer_stride = |block: usize, second: bool| {
            let idx = if second { n_blocks + block } else { block };
            if idx < strided {
                2
            } else {
                1
            }
        };
        let (eps, mom) = (config.bn_eps, config.bn_momentum);
        let mut blocks = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let c_in = if b == 0 { NUM_BINS } else { c };
            let (s1, s2) = (layer_stride(b, false), layer_stride(b, true));
            let p = format!("{name}.block{b}");
            let shortcut = (c_in != c || s1 * s2 != 1).then(|| {
                (
                    Conv1d::new(store, &format!("{p}.short"), c_in, c, 1, s1 * s2, rng),
                    BatchNorm1d::new(store, &format!("{p}.short_bn"), c, eps, mom),
                )
            });
            blocks.push(ResidualBlock {
                conv1: Conv1d::new(store, &format!("{p}.conv1"), c_in, c, config.kernel, s1, rng),
                bn1: BatchNorm1d::new(store, &format!("{p}.bn1"), c, eps, mom),
                conv2: Conv1d::new(store, &format!("{p}.conv2"), c, c, config.kernel, s2, rng),
                bn2: BatchNorm1d::new(store, &format!("{p}.bn2"), c, eps, mom),
                shortcut,
            });
        }
        let proj = Linear::new(store, &format!("{name}.proj"), c, config.embedding_dim, rng);
        Self {
            blocks,
            proj,
            config: config.clone(),
        }
    }

    /// Encodes a batch of `[frames, 64]` inputs; batch-norm statistics are
    /// shared across the batch in training mode.
    pub fn forward(&self, t: &mut Tape, inputs: &[Var]) -> Result<Vec<Var>> {
        if inputs.is_empty() {
            return Err(invalid("encoder needs at least one input"));
        }
        for &x in inputs {
            let (frames, bins) = t.shape(x);
            if bins != NUM_BINS {
                return Err(Error::Shape(format!("encoder input has {bins} bins, expected {NUM_BINS}")));
            }
            if frames < self.config.total_stride {
                return Err(invalid(format!(
                    "{frames} frames is fewer than the total stride {}",
                    self.config.total_stride
                )));
            }
        }
        let mut xs: Vec<Var> = inputs.iter().map(|&x| t.transpose(x)).collect();
        for block in &self.blocks {
            let h: Vec<Var> = xs.iter().map(|&x| block.conv1.forward(t, x)).collect();
            let h = block.bn1.forward(t, &h);
            let h: Vec<Var> = h.iter().map(|&x| t.relu(x)).collect();
            let h: Vec<Var> = h.iter().map(|&x| block.conv2.forward(t, x)).collect();
            let h = block.bn2.forward(t, &h);
            let skip = match &block.shortcut {
                Some((conv, bn)) => {
                    let s: Vec<Var> = xs.iter().map(|&x| conv.forward(t, x)).collect();
                    bn.forward(t, &s)
                }
                None => xs.clone(),
            };
            xs = h
                .iter()
                .zip(&skip)
                .map(|(&a, &b)| {
                    let y = t.add(a, b);
                    t.relu(y)
                })
                .collect();
        }
        Ok(xs
            .into_iter()
            .map(|x| {
                let seq = t.transpose(x);
                self.proj.forward(t, seq)
            })
            .collect())
    }
}

/// Stack of transformer layers with an optional learned summary token.
#[derive(Debug, Clone)]
struct Stack {
    layers: Vec<TransformerLayer>,
    final_ln: LayerNorm,
}

impl Stack {
    fn new(store: &mut ParamStore, name: &str, dim: usize, cfg: &TransformerConfig, rng: &mut Rng) -> Self {
        let layers = (0..cfg.layers)
            .map(|i| TransformerLayer::new(store, &format!("{name}.layer{i}"), dim, cfg.heads, cfg.ffn_dim, rng))
            .collect();
        Self {
            layers,
            final_ln: LayerNorm::new(store, &format!("{name}.ln"), dim),
        }
    }

    fn forward(&self, t: &mut Tape, mut x: Var) -> Var {
        for l in &self.layers {
            x = l.forward(t, x);
        }
        self.final_ln.forward(t, x)
    }
}

/// Prepends a learned token, runs the stack and returns the token's output row.
fn summarize_with_token(t: &mut Tape, stack: &Stack, token: ParamId, seq: Var) -> Var {
    let tok = t.param(token);
    let x = t.concat_rows(&[tok, seq]);
    let y = stack.forward(t, x);
    t.slice_rows(y, 0, 1)
}

/// Maps a hidden sequence to a unit-norm embedding.
#[derive(Debug, Clone)]
pub struct Summarizer {
    token: ParamId,
    stack: Stack,
    out: Linear,
}

impl Summarizer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, cfg: &TransformerConfig, rng: &mut Rng) -> Self {
        Self {
            token: store.add(format!("{name}.token"), small_normal(1, dim, 0.02, rng), true),
            stack: Stack::new(store, name, dim, cfg, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
        }
    }

    /// `[K, D]` -> `[1, D]` with unit L2 norm.
    pub fn forward(&self, t: &mut Tape, h: Var) -> Result<Var> {
        if t.shape(h).0 == 0 {
            return Err(invalid("cannot summarise an empty sequence"));
        }
        let s = summarize_with_token(t, &self.stack, self.token, h);
        let s = self.out.forward(t, s);
        Ok(t.normalize_rows(s))
    }
}

/// Frame-rate transformer over `[frames, 64]` features.
#[derive(Debug, Clone)]
pub struct SpeechEncoder {
    input: Linear,
    stack: Stack,
    positional: bool,
}

impl SpeechEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cfg: &TransformerConfig,
        positional: bool,
        rng: &mut Rng,
    ) -> Self {
        Self {
            input: Linear::new(store, &format!("{name}.input"), NUM_BINS, dim, rng),
            stack: Stack::new(store, name, dim, cfg, rng),
            positional,
        }
    }

    /// `[frames, 64]` -> `[frames, D]`.
    pub fn forward(&self, t: &mut Tape, f: Var) -> Result<Var> {
        let (frames, bins) = t.shape(f);
        if frames == 0 {
            return Err(invalid("speech encoder input is empty"));
        }
        if bins != NUM_BINS {
            return Err(Error::Shape(format!("speech encoder input has {bins} bins")));
        }
        let mut x = self.input.forward(t, f);
        if self.positional {
            let dim = t.shape(x).1;
            let pe = t.constant(positional_encoding(frames, dim));
            x = t.add(x, pe);
        }
        Ok(self.stack.forward(t, x))
    }
}

/// Reconstructs LFBE frames from speech content, an acoustic embedding and the envelope.
#[derive(Debug, Clone)]
pub struct Decoder {
    input: Linear,
    stack: Stack,
    out: Linear,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, cfg: &TransformerConfig, rng: &mut Rng) -> Self {
        Self {
            input: Linear::new(store, &format!("{name}.input"), 2 * dim + 1, dim, rng),
            stack: Stack::new(store, name, dim, cfg, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, NUM_BINS, rng),
        }
    }

    /// `speech: [frames, D]`, `z: [1, D]`, `env: [frames, 1]` -> `[frames, 64]`.
    pub fn forward(&self, t: &mut Tape, speech: Var, z: Var, env: Var) -> Result<Var> {
        let (frames, dim) = t.shape(speech);
        let (env_len, env_cols) = t.shape(env);
        if env_len != frames || env_cols != 1 {
            return Err(Error::Shape(format!(
                "speech sequence has {frames} frames but envelope is {env_len}x{env_cols}"
            )));
        }
        if t.shape(z) != (1, dim) {
            return Err(Error::Shape(format!("embedding shape {:?}, expected (1, {dim})", t.shape(z))));
        }
        let zs = t.broadcast_rows(z, frames);
        let x = t.concat_cols(&[speech, zs, env]);
        let x = self.input.forward(t, x);
        let x = self.stack.forward(t, x);
        Ok(self.out.forward(t, x))
    }
}

/// Two-stage attention classifier over per-device hidden sequences.
#[derive(Debug, Clone)]
pub struct Classifier {
    stage1: Stack,
    token: ParamId,
    stage2: Stack,
    head1: Linear,
    head2: Linear,
    positional: bool,
}

impl Classifier {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cfg: &TransformerConfig,
        head_hidden: usize,
        positional: bool,
        rng: &mut Rng,
    ) -> Self {
        Self {
            stage1: Stack::new(store, &format!("{name}.stage1"), dim, cfg, rng),
            token: store.add(format!("{name}.token"), small_normal(1, dim, 0.02, rng), true),
            stage2: Stack::new(store, &format!("{name}.stage2"), dim, cfg, rng),
            head1: Linear::new(store, &format!("{name}.head1"), dim, head_hidden, rng),
            head2: Linear::new(store, &format!("{name}.head2"), head_hidden, 1, rng),
            positional,
        }
    }

    /// Returns `[1, N]` logits.
    pub fn logits(&self, t: &mut Tape, hidden: &[Var]) -> Result<Var> {
        if hidden.is_empty() {
            return Err(invalid("classifier needs at least one device"));
        }
        let lens: Vec<usize> = hidden.iter().map(|&h| t.shape(h).0).collect();
        if lens.contains(&0) {
            return Err(invalid("empty hidden sequence"));
        }
        let mut x = if hidden.len() == 1 { hidden[0] } else { t.concat_rows(hidden) };
        if self.positional {
            let (len, dim) = t.shape(x);
            let pe = t.constant(positional_encoding(len, dim));
            x = t.add(x, pe);
        }
        let g = self.stage1.forward(t, x);
        let mut summaries = Vec::with_capacity(hidden.len());
        let mut off = 0;
        for len in lens {
            let gi = if hidden.len() == 1 { g } else { t.slice_rows(g, off, off + len) };
            off += len;
            summaries.push(summarize_with_token(t, &self.stage2, self.token, gi));
        }
        let s = if summaries.len() == 1 { summaries[0] } else { t.concat_rows(&summaries) };
        let h = self.head1.forward(t, s);
        let h = t.relu(h);
        let l = self.head2.forward(t, h);
        Ok(t.transpose(l))
    }

    /// Returns `[1, N]` arbitration probabilities.
    pub fn forward(&self, t: &mut Tape, hidden: &[Var]) -> Result<Var> {
        let l = self.logits(t, hidden)?;
        Ok(t.softmax_rows(l))
    }
}

/// Every network component, sharing one parameter store.
///
/// Parameter names are prefixed `encoder.`, `summarizer.`, `speech.`,
/// `decoder.` and `classifier.`, so pretrained encoders can be transplanted
/// by prefix.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub summarizer: Summarizer,
    pub speech: SpeechEncoder,
    pub decoder: Decoder,
    pub classifier: Classifier,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = crate::rng_from_seed(seed);
        let mut store = ParamStore::new();
        let d = config.encoder.embedding_dim;
        let tc = &config.transformer;
        let model = Self {
            config: config.clone(),
            encoder: Encoder::new(&mut store, "encoder", &config.encoder, &mut rng),
            summarizer: Summarizer::new(&mut store, "summarizer", d, tc, &mut rng),
            speech: SpeechEncoder::new(&mut store, "speech", d, tc, config.speech_positional, &mut rng),
            decoder: Decoder::new(&mut store, "decoder", d, tc, &mut rng),
            classifier: Classifier::new(
                &mut store,
                "classifier",
                d,
                tc,
                config.head_hidden,
                config.classifier_positional,
                &mut rng,
            ),
        };
        Ok((model, store))
    }

    /// Arbitration probabilities for one scenario's normalised features.
    pub fn arbitrate(&self, store: &ParamStore, features: &[FeatureMatrix]) -> Result<Vec<f64>> {
        let mut t = Tape::new(store, false);
        let xs: Vec<Var> = features.iter().map(|f| t.constant(feature_tensor(f))).collect();
        let h = self.encoder.forward(&mut t, &xs)?;
        let p = self.classifier.forward(&mut t, &h)?;
        Ok(t.value(p).data.clone())
    }
}
