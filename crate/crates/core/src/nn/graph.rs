//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every node that requires one.

use super::params::{ParamId, ParamStore};
use super::tensor::{dot, matmul, matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    LnFloor(Var, f64),
    SoftmaxRows(Var),
    /// Per-row standardisation; `aux` holds the inverse standard deviations.
    StandardizeRows(Var),
    /// Per-row L2 normalisation; `aux` holds the norms.
    NormalizeRows(Var),
    Conv1d {
        x: Var,
        w: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    BroadcastRows(Var),
    Sum(Var),
    Mean(Var),
    Pick(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    aux: Vec<f64>,
}

/// Running-statistics update produced by a batch-norm layer in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

pub struct Tape<'p> {
    nodes: Vec<Node>,
    store: &'p ParamStore,
    param_vars: Vec<Option<Var>>,
    pub(crate) training: bool,
    pub(crate) batch_stats: Vec<BatchStats>,
}

/// Gradients from one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every trainable parameter that took part in the forward
    /// pass, in parameter-id order.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].clone().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore, training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            store,
            param_vars: vec![None; store.len()],
            training,
            batch_stats: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn take_batch_stats(&mut self) -> Vec<BatchStats> {
        std::mem::take(&mut self.batch_stats)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push_with(value, op, needs_grad, Vec::new())
    }

    fn push_with(&mut self, value: Tensor, op: Op, needs_grad: bool, aux: Vec<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_with(value, Op::Leaf, false, Vec::new())
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_with(value, Op::Leaf, true, Vec::new())
    }

    /// The current value of a stored parameter; trainable parameters receive gradients.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let entry = self.store.entry(id);
        let v = self.push_with(entry.value.clone(), Op::Leaf, entry.trainable, Vec::new());
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.rows, "matmul {:?} x {:?}", ta.shape(), tb.shape());
        let out = Tensor::from_vec(ta.rows, tb.cols, matmul(&ta.data, &tb.data, ta.rows, ta.cols, tb.cols));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a x b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.cols, "matmul_nt {:?} x {:?}^T", ta.shape(), tb.shape());
        let out = Tensor::from_vec(ta.rows, tb.rows, matmul_nt(&ta.data, &tb.data, ta.rows, ta.cols, tb.rows));
        self.push(out, Op::MatMulNT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise op on mismatched shapes");
        Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    fn broadcast(&mut self, a: Var, v: Var, by_row: bool, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tv) = (self.value(a), self.value(v));
        if by_row {
            assert_eq!(tv.shape(), (1, ta.cols), "row broadcast of {:?} onto {:?}", tv.shape(), ta.shape());
        } else {
            assert_eq!(tv.shape(), (ta.rows, 1), "column broadcast of {:?} onto {:?}", tv.shape(), ta.shape());
        }
        let mut out = ta.clone();
        for r in 0..ta.rows {
            for c in 0..ta.cols {
                let b = if by_row { tv.data[c] } else { tv.data[r] };
                let x = &mut out.data[r * ta.cols + c];
                *x = f(*x, b);
            }
        }
        out
    }

    /// Adds a `[1, cols]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.broadcast(a, row, true, |x, y| x + y);
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.broadcast(a, row, true, |x, y| x * y);
        self.push(out, Op::MulRow(a, row), &[a, row])
    }

    /// Adds a `[rows, 1]` column to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let out = self.broadcast(a, col, false, |x, y| x + y);
        self.push(out, Op::AddCol(a, col), &[a, col])
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let out = self.broadcast(a, col, false, |x, y| x * y);
        self.push(out, Op::MulCol(a, col), &[a, col])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|x| x * s).collect());
        self.push(out, Op::Scale(a, s), &[a])
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|&x| f(x)).collect())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    /// `|a|`, with subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::abs);
        self.push(out, Op::Abs(a), &[a])
    }

    /// `ln(max(a, floor))`; no gradient flows where the floor is active.
    pub fn ln_floor(&mut self, a: Var, floor: f64) -> Var {
        let out = self.map(a, |x| x.max(floor).ln());
        self.push(out, Op::LnFloor(a, floor), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows {
            let row = &mut out.data[r * t.cols..(r + 1) * t.cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// `(x - mean) / sqrt(var + eps)` along each row (population variance).
    pub fn standardize_rows(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let n = t.cols as f64;
        let mut out = t.clone();
        let mut inv = Vec::with_capacity(t.rows);
        for r in 0..t.rows {
            let row = &mut out.data[r * t.cols..(r + 1) * t.cols];
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let s = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * s);
            inv.push(s);
        }
        let needs = self.nodes[a.0].needs_grad;
        self.push_with(out, Op::StandardizeRows(a), needs, inv)
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        let mut norms = Vec::with_capacity(t.rows);
        for r in 0..t.rows {
            let row = &mut out.data[r * t.cols..(r + 1) * t.cols];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|x| *x /= norm);
            norms.push(norm);
        }
        let needs = self.nodes[a.0].needs_grad;
        self.push_with(out, Op::NormalizeRows(a), needs, norms)
    }

    /// 1-D convolution of `x: [c_in, T]` with `w: [c_out, c_in * kernel]`,
    /// zero padding `pad` on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let cin = tx.rows;
        assert_eq!(tw.cols, cin * kernel, "conv weight {:?} for {cin} input channels", tw.shape());
        let t_in = tx.cols;
        assert!(t_in + 2 * pad >= kernel, "conv input shorter than its kernel");
        let t_out = (t_in + 2 * pad - kernel) / stride + 1;
        let cols = im2col(&tx.data, cin, t_in, kernel, stride, pad, t_out);
        let out = Tensor::from_vec(tw.rows, t_out, matmul(&tw.data, &cols, tw.rows, cin * kernel, t_out));
        self.push(
            out,
            Op::Conv1d {
                x,
                w,
                kernel,
                stride,
                pad,
            },
            &[x, w],
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(start < end && end <= t.rows, "row slice {start}..{end} of {}", t.rows);
        let out = Tensor::from_vec(end - start, t.cols, t.data[start * t.cols..end * t.cols].to_vec());
        self.push(out, Op::SliceRows(a, start), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(start < end && end <= t.cols, "column slice {start}..{end} of {}", t.cols);
        let mut data = Vec::with_capacity(t.rows * (end - start));
        for r in 0..t.rows {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::from_vec(t.rows, end - start, data);
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.rows, rows, "concat_cols height mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Repeats a `[1, cols]` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows, 1, "broadcast_rows expects a single row");
        let out = Tensor::from_vec(n, t.cols, t.data.repeat(n));
        self.push(out, Op::BroadcastRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Var {
        let v = self.value(a).get(r, c);
        self.push(Tensor::scalar(v), Op::Pick(a, r, c), &[a])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .filter(|(id, _)| self.store.entry(*id).trainable)
            .collect();
        Gradients { grads, params }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let like = |t: &Tensor, data: Vec<f64>| Tensor::from_vec(t.rows, t.cols, data);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, like(ta, matmul_nt(&g.data, &tb.data, g.rows, g.cols, tb.rows)));
                }
                if wants(*b) {
                    acc(*b, like(tb, matmul_tn(&ta.data, &g.data, ta.rows, ta.cols, g.cols)));
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, like(ta, matmul(&g.data, &tb.data, g.rows, g.cols, tb.cols)));
                }
                if wants(*b) {
                    acc(*b, like(tb, matmul_tn(&g.data, &ta.data, g.rows, g.cols, ta.cols)));
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(g, g.data.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, like(g, g.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect()));
                }
                if wants(*b) {
                    acc(*b, like(g, g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect()));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if wants(*row) {
                    acc(*row, col_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (val(*a), val(*row));
                if wants(*a) {
                    let mut d = g.clone();
                    for r in 0..d.rows {
                        for (x, s) in d.data[r * d.cols..(r + 1) * d.cols].iter_mut().zip(&tr.data) {
                            *x *= s;
                        }
                    }
                    acc(*a, d);
                }
                if wants(*row) {
                    let prod = like(g, g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect());
                    acc(*row, col_sums(&prod));
                }
            }
            Op::AddCol(a, col) => {
                acc(*a, g.clone());
                if wants(*col) {
                    acc(*col, row_sums(g));
                }
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (val(*a), val(*col));
                if wants(*a) {
                    let mut d = g.clone();
                    for r in 0..d.rows {
                        let s = tc.data[r];
                        d.data[r * d.cols..(r + 1) * d.cols].iter_mut().for_each(|x| *x *= s);
                    }
                    acc(*a, d);
                }
                if wants(*col) {
                    let prod = like(g, g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect());
                    acc(*col, row_sums(&prod));
                }
            }
            Op::Scale(a, s) => acc(*a, like(g, g.data.iter().map(|x| x * s).collect())),
            Op::Relu(a) => {
                let ta = val(*a);
                acc(*a, like(g, g.data.iter().zip(&ta.data).map(|(d, x)| if *x > 0.0 { *d } else { 0.0 }).collect()));
            }
            Op::Abs(a) => {
                let ta = val(*a);
                let sign = |x: f64| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                acc(*a, like(g, g.data.iter().zip(&ta.data).map(|(d, x)| d * sign(*x)).collect()));
            }
            Op::LnFloor(a, floor) => {
                let ta = val(*a);
                acc(
                    *a,
                    like(g, g.data.iter().zip(&ta.data).map(|(d, x)| if *x > *floor { d / x } else { 0.0 }).collect()),
                );
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s = dot(yr, gr);
                    for c in 0..y.cols {
                        d.data[r * y.cols + c] = yr[c] * (gr[c] - s);
                    }
                }
                acc(*a, d);
            }
            Op::StandardizeRows(a) => {
                let y = &node.value;
                let n = y.cols as f64;
                let mut d = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let mg = gr.iter().sum::<f64>() / n;
                    let mgy = dot(gr, yr) / n;
                    let s = node.aux[r];
                    for c in 0..y.cols {
                        d.data[r * y.cols + c] = s * (gr[c] - mg - yr[c] * mgy);
                    }
                }
                acc(*a, d);
            }
            Op::NormalizeRows(a) => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let p = dot(yr, gr);
                    let norm = node.aux[r];
                    for c in 0..y.cols {
                        d.data[r * y.cols + c] = (gr[c] - yr[c] * p) / norm;
                    }
                }
                acc(*a, d);
            }
            Op::Conv1d {
                x,
                w,
                kernel,
                stride,
                pad,
            } => {
                let (tx, tw) = (val(*x), val(*w));
                let (cin, t_in, t_out) = (tx.rows, tx.cols, g.cols);
                let ck = cin * kernel;
                if wants(*w) {
                    let cols = im2col(&tx.data, cin, t_in, *kernel, *stride, *pad, t_out);
                    acc(*w, like(tw, matmul_nt(&g.data, &cols, g.rows, t_out, ck)));
                }
                if wants(*x) {
                    let dcols = matmul_tn(&tw.data, &g.data, tw.rows, ck, t_out);
                    let mut dx = Tensor::zeros(cin, t_in);
                    for c in 0..cin {
                        for j in 0..*kernel {
                            let row = &dcols[(c * kernel + j) * t_out..(c * kernel + j + 1) * t_out];
                            for (t, v) in row.iter().enumerate() {
                                let src = (t * stride + j) as isize - *pad as isize;
                                if src >= 0 && (src as usize) < t_in {
                                    dx.data[c * t_in + src as usize] += v;
                                }
                            }
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::SliceRows(a, start) => {
                let ta = val(*a);
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                d.data[start * ta.cols..start * ta.cols + g.len()].copy_from_slice(&g.data);
                acc(*a, d);
            }
            Op::SliceCols(a, start) => {
                let ta = val(*a);
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                for r in 0..ta.rows {
                    d.data[r * ta.cols + start..r * ta.cols + start + g.cols].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    if wants(*p) {
                        acc(*p, like(val(*p), g.data[off..off + n].to_vec()));
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let tp = val(*p);
                    if wants(*p) {
                        let mut d = Tensor::zeros(tp.rows, tp.cols);
                        for r in 0..tp.rows {
                            d.data[r * tp.cols..(r + 1) * tp.cols]
                                .copy_from_slice(&g.data[r * g.cols + off..r * g.cols + off + tp.cols]);
                        }
                        acc(*p, d);
                    }
                    off += tp.cols;
                }
            }
            Op::BroadcastRows(a) => acc(*a, col_sums(g)),
            Op::Sum(a) => {
                let ta = val(*a);
                acc(*a, Tensor::full(ta.rows, ta.cols, g.item()));
            }
            Op::Mean(a) => {
                let ta = val(*a);
                acc(*a, Tensor::full(ta.rows, ta.cols, g.item() / ta.len() as f64));
            }
            Op::Pick(a, r, c) => {
                let ta = val(*a);
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                d.data[r * ta.cols + c] = g.item();
                acc(*a, d);
            }
        }
    }
}

fn col_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols);
    for r in 0..t.rows {
        for (o, v) in out.data.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out
}

fn row_sums(t: &Tensor) -> Tensor {
    Tensor::from_vec(t.rows, 1, (0..t.rows).map(|r| t.row(r).iter().sum()).collect())
}

/// `[c_in * kernel, t_out]` patch matrix.
fn im2col(x: &[f64], cin: usize, t_in: usize, kernel: usize, stride: usize, pad: usize, t_out: usize) -> Vec<f64> {
    let mut cols = vec![0.0; cin * kernel * t_out];
    for c in 0..cin {
        let xr = &x[c * t_in..(c + 1) * t_in];
        for j in 0..kernel {
            let row = &mut cols[(c * kernel + j) * t_out..(c * kernel + j + 1) * t_out];
            for (t, o) in row.iter_mut().enumerate() {
                let src = (t * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < t_in {
                    *o = xr[src as usize];
                }
            }
        }
    }
    cols
}
