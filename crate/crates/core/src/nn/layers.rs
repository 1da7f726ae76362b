use super::graph::{BatchStats, Tape, Var};
use super::params::{glorot, he_normal, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::Rng;

/// `y = x W + b` with `W: [in, out]`, applied to every row.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot(fan_in, fan_out, fan_in, fan_out, rng), true);
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out), true);
        Self { w, b }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

/// Layer normalisation over the feature axis of a `[time, features]` sequence.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(1, dim, 1.0), true);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, dim), true);
        Self { gamma, beta, eps: 1e-5 }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        let y = t.standardize_rows(x, self.eps);
        let y = t.mul_row(y, g);
        t.add_row(y, b)
    }
}

/// Bias-free 1-D convolution over `[channels, time]` activations.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), he_normal(c_out, c_in * kernel, c_in * kernel, rng), true);
        Self {
            w,
            kernel,
            stride,
            pad: (kernel - 1) / 2,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        t.conv1d(x, w, self.kernel, self.stride, self.pad)
    }
}

/// Batch normalisation of `[channels, time]` activations. Statistics are
/// taken per channel over the time axes of every sequence in the batch.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(channels, 1, 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(channels, 1), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(channels, 1), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(channels, 1, 1.0), false),
            eps,
            momentum,
        }
    }

    pub fn forward(&self, t: &mut Tape, xs: &[Var]) -> Vec<Var> {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        if !t.is_training() {
            let rm = t.store().value(self.running_mean).clone();
            let rv = t.store().value(self.running_var).clone();
            let inv = Tensor::from_vec(rv.rows, 1, rv.data.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect());
            let inv = t.constant(inv);
            let rm = t.constant(rm);
            let scale = t.mul(g, inv);
            let shift = t.mul(scale, rm);
            let shift = t.sub(b, shift);
            return xs
                .iter()
                .map(|&x| {
                    let y = t.mul_col(x, scale);
                    t.add_col(y, shift)
                })
                .collect();
        }
        let widths: Vec<usize> = xs.iter().map(|&x| t.shape(x).1).collect();
        let joined = if xs.len() == 1 { xs[0] } else { t.concat_cols(xs) };
        self.record_stats(t, joined);
        let y = t.standardize_rows(joined, self.eps);
        let y = t.mul_col(y, g);
        let y = t.add_col(y, b);
        if xs.len() == 1 {
            return vec![y];
        }
        let mut out = Vec::with_capacity(xs.len());
        let mut off = 0;
        for w in widths {
            out.push(t.slice_cols(y, off, off + w));
            off += w;
        }
        out
    }

    fn record_stats(&self, t: &mut Tape, x: Var) {
        let v = t.value(x);
        let n = v.cols as f64;
        let mut mean = Vec::with_capacity(v.rows);
        let mut var = Vec::with_capacity(v.rows);
        for r in 0..v.rows {
            let row = v.row(r);
            let m = row.iter().sum::<f64>() / n;
            let ss = row.iter().map(|x| (x - m).powi(2)).sum::<f64>();
            mean.push(m);
            var.push(if v.cols > 1 { ss / (n - 1.0) } else { 0.0 });
        }
        t.batch_stats.push(BatchStats {
            running_mean: self.running_mean,
            running_var: self.running_var,
            mean,
            var,
            momentum: self.momentum,
        });
    }
}

/// Applies logged batch statistics to the running buffers.
pub fn apply_batch_stats(store: &mut ParamStore, stats: &[BatchStats]) {
    for s in stats {
        let m = s.momentum;
        for (r, b) in store.value_mut(s.running_mean).data.iter_mut().zip(&s.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in store.value_mut(s.running_var).data.iter_mut().zip(&s.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "model dimension {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    /// Rows of `queries` attend over rows of `keys`.
    pub fn forward(&self, t: &mut Tape, queries: Var, keys: Var) -> Var {
        let q = self.q.forward(t, queries);
        let k = self.k.forward(t, keys);
        let v = self.v.forward(t, keys);
        let dim = t.shape(q).1;
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    t.slice_cols(q, h * dh, (h + 1) * dh),
                    t.slice_cols(k, h * dh, (h + 1) * dh),
                    t.slice_cols(v, h * dh, (h + 1) * dh),
                )
            };
            let s = t.matmul_nt(qh, kh);
            let s = t.scale(s, scale);
            let p = t.softmax_rows(s);
            outs.push(t.matmul(p, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs) };
        self.o.forward(t, cat)
    }
}

/// Pre-norm transformer layer: attention and feedforward sublayers, each
/// with a residual connection.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn_dim: usize, rng: &mut Rng) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff1: Linear::new(store, &format!("{name}.ff1"), dim, ffn_dim, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ffn_dim, dim, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let n = self.ln1.forward(t, x);
        let a = self.attn.forward(t, n, n);
        let x = t.add(x, a);
        let n = self.ln2.forward(t, x);
        let h = self.ff1.forward(t, n);
        let h = t.relu(h);
        let h = self.ff2.forward(t, h);
        t.add(x, h)
    }
}

/// Sinusoidal positional encodings, `[len, dim]`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut pe = Tensor::zeros(len, dim);
    for p in 0..len {
        for i in 0..dim {
            let k = (i / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * k / dim as f64);
            pe.data[p * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
