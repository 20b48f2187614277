//! A small reverse-mode tape over 2-D matrices.
//!
//! Every model in the crate builds its forward pass on a [`Tape`]; calling
//! [`Tape::backward`] walks the recorded nodes in reverse and returns the
//! gradient of a scalar node with respect to every parameter that was read.
//! Parameters are borrowed from the [`ParamStore`], never copied.

use std::borrow::Cow;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{Grads, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gather { src: Var, ids: Arc<Vec<Option<usize>>> },
    Gelu(Var),
    Tanh(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix<T>, inv_std: Vec<T> },
    MaskedSoftmax { x: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    CrossEntropySum { logits: Var, targets: Arc<Vec<usize>>, probs: Matrix<T> },
    LogSigmoid(Var),
    Log1mExp(Var),
    MeanRows(Var),
    SumAll(Var),
    RepeatRows(Var),
    Dropout { x: Var, keep: Matrix<T> },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Matrix<T>>,
    op: Op<T>,
}

pub struct Tape<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    nodes: Vec<Node<'a, T>>,
    param_vars: Vec<Option<Var>>,
    dropout: Option<(T, ChaCha8Rng)>,
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()], dropout: None }
    }

    /// A training tape: [`Tape::dropout`] becomes active with the given rate.
    pub fn training(store: &'a ParamStore<T>, rate: f64, seed: u64) -> Self {
        let mut tape = Self::new(store);
        if rate > 0.0 {
            tape.dropout = Some((T::of(rate), ChaCha8Rng::seed_from_u64(seed)));
        }
        tape
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Reads a parameter; repeated reads share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let store = self.store;
        self.nodes.push(Node { value: Cow::Borrowed(store.get(id)), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul {:?} x {:?}", va.shape(), vb.shape());
        let out = va.matmul(vb);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.cols(), "matmul_nt {:?} x {:?}", va.shape(), vb.shape());
        let mut out = Matrix::zeros(va.rows(), vb.rows());
        gemm_nt(va.data(), vb.data(), out.data_mut(), va.rows(), va.cols(), vb.rows());
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((1, out.cols()), b.shape(), "bias shape");
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.value(a).clone();
        out.scale(s);
        self.push(out, Op::Scale(a, s))
    }

    /// Row gather; `None` produces a zero row.
    pub fn gather(&mut self, src: Var, ids: Arc<Vec<Option<usize>>>) -> Var {
        let table = self.value(src);
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (r, id) in ids.iter().enumerate() {
            if let Some(i) = *id {
                out.row_mut(r).copy_from_slice(table.row(i));
            }
        }
        self.push(out, Op::Gather { src, ids })
    }

    pub fn gather_rows(&mut self, src: Var, ids: &[usize]) -> Var {
        self.gather(src, Arc::new(ids.iter().map(|&i| Some(i)).collect()))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = gelu(*v);
        }
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        self.push(out, Op::Tanh(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.shape(), (1, cols));
        let n = T::of(cols as f64);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::of(LN_EPS)).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.row_mut(r)[c] = h;
                out.row_mut(r)[c] = h * g.data()[c] + b.data()[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Row-wise softmax over entries where `mask` is true; masked entries are 0.
    pub fn masked_softmax(&mut self, x: Var, mask: Arc<Vec<bool>>) -> Var {
        let xv = self.value(x);
        assert_eq!(mask.len(), xv.len());
        let cols = xv.cols();
        let mut out = Matrix::zeros(xv.rows(), cols);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let m = &mask[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                continue;
            }
            let o = out.row_mut(r);
            let mut z = T::zero();
            for c in 0..cols {
                if m[c] {
                    o[c] = (row[c] - max).exp();
                    z += o[c];
                }
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        self.push(out, Op::MaskedSoftmax { x })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Sum over rows of `-log softmax(logits)[target]`, as a `1×1` node.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: Arc<Vec<usize>>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len());
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let p = probs.row_mut(r);
            let mut z = T::zero();
            for (pv, &v) in p.iter_mut().zip(row) {
                *pv = (v - max).exp();
                z += *pv;
            }
            for pv in p.iter_mut() {
                *pv /= z;
            }
            total += z.ln() + max - row[t];
        }
        self.push(Matrix::scalar(total), Op::CrossEntropySum { logits, targets, probs })
    }

    /// Elementwise `ln σ(x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = log_sigmoid(*v);
        }
        self.push(out, Op::LogSigmoid(a))
    }

    /// Elementwise `ln(1 − eˣ)` for `x < 0`; inputs are clamped just below zero.
    pub fn log1m_exp(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = log1m_exp(clamp_neg(*v));
        }
        self.push(out, Op::Log1mExp(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = T::of(av.rows() as f64);
        let base = av.row(0).to_vec();
        let mut dev = vec![T::zero(); av.cols()];
        for r in 1..av.rows() {
            for ((d, &v), &b) in dev.iter_mut().zip(av.row(r)).zip(&base) {
                *d += v - b;
            }
        }
        let data = base.iter().zip(&dev).map(|(&b, &d)| b + d / n).collect();
        let out = Matrix::from_vec(1, av.cols(), data);
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Matrix::scalar(s), Op::SumAll(a))
    }

    /// Broadcasts a `1×c` row to `n×c`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), 1);
        let mut data = Vec::with_capacity(n * av.cols());
        for _ in 0..n {
            data.extend_from_slice(av.data());
        }
        let cols = av.cols();
        self.push(Matrix::from_vec(n, cols, data), Op::RepeatRows(a))
    }

    /// Inverted dropout; identity on inference tapes.
    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let rate = *rate;
        let (rows, cols) = self.nodes[x.0].value.shape();
        let scale = T::one() / (T::one() - rate);
        let keep = Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| if T::of(rng.gen::<f64>()) < rate { T::zero() } else { scale })
                .collect(),
        );
        let mut out = self.value(x).clone();
        for (o, &k) in out.data_mut().iter_mut().zip(keep.data()) {
            *o *= k;
        }
        self.push(out, Op::Dropout { x, keep })
    }

    /// Gradients of the scalar node `loss` with respect to every parameter
    /// read on this tape, accumulated into `grads`.
    pub fn backward_into(&self, loss: Var, grads: &mut Grads<T>) {
        for (id, g) in self.backward(loss) {
            grads.accumulate(id, &g);
        }
    }

    pub fn backward(&self, loss: Var) -> Vec<(ParamId, Matrix<T>)> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        let mut out = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.push((*id, g)),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, va.shape());
                    gemm_nt(g.data(), vb.data(), ga.data_mut(), va.rows(), vb.cols(), va.cols());
                    let gb = acc(&mut grads, *b, vb.shape());
                    gemm_tn(va.data(), g.data(), gb.data_mut(), va.rows(), va.cols(), vb.cols());
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, va.shape());
                    gemm_nn(g.data(), vb.data(), ga.data_mut(), va.rows(), vb.rows(), va.cols());
                    let gb = acc(&mut grads, *b, vb.shape());
                    gemm_tn(g.data(), va.data(), gb.data_mut(), va.rows(), vb.rows(), va.cols());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.shape()).add_assign(&g);
                    acc(&mut grads, *b, g.shape()).add_assign(&g);
                }
                Op::AddRow(a, bias) => {
                    acc(&mut grads, *a, g.shape()).add_assign(&g);
                    let gb = acc(&mut grads, *bias, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut grads, *a, g.shape());
                    for (o, &v) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += *s * v;
                    }
                }
                Op::Gather { src, ids } => {
                    let shape = self.value(*src).shape();
                    let gs = acc(&mut grads, *src, shape);
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(i) = *id {
                            for (o, &v) in gs.row_mut(i).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::Gelu(a) => {
                    let va = self.value(*a);
                    let ga = acc(&mut grads, *a, g.shape());
                    for ((o, &x), &gv) in ga.data_mut().iter_mut().zip(va.data()).zip(g.data()) {
                        *o += gv * gelu_grad(x);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = acc(&mut grads, *a, g.shape());
                    for ((o, &yv), &gv) in ga.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                        *o += gv * (T::one() - yv * yv);
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let (rows, cols) = g.shape();
                    let gam = self.value(*gamma).data().to_vec();
                    let n = T::of(cols as f64);
                    {
                        let gg = acc(&mut grads, *gamma, (1, cols));
                        for r in 0..rows {
                            for c in 0..cols {
                                gg.data_mut()[c] += g.row(r)[c] * xhat.row(r)[c];
                            }
                        }
                    }
                    {
                        let gbeta = acc(&mut grads, *beta, (1, cols));
                        for r in 0..rows {
                            for (o, &v) in gbeta.data_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, (rows, cols));
                    let mut gxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let (gr, hr) = (g.row(r), xhat.row(r));
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for c in 0..cols {
                            gxhat[c] = gr[c] * gam[c];
                            s1 += gxhat[c];
                            s2 += gxhat[c] * hr[c];
                        }
                        let k = inv_std[r] / n;
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o += k * (n * gxhat[c] - s1 - hr[c] * s2);
                        }
                    }
                }
                Op::MaskedSoftmax { x } => {
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, g.shape());
                    for r in 0..g.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o += yr[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let shape = self.value(*x).shape();
                    let gx = acc(&mut grads, *x, shape);
                    for r in 0..g.rows() {
                        for (o, &v) in gx.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.value(p).shape();
                        let gp = acc(&mut grads, p, shape);
                        for r in 0..shape.0 {
                            for (o, &v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + shape.1]) {
                                *o += v;
                            }
                        }
                        off += shape.1;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.value(p).shape();
                        let n = shape.0 * shape.1;
                        let gp = acc(&mut grads, p, shape);
                        for (o, &v) in gp.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                            *o += v;
                        }
                        off += n;
                    }
                }
                Op::CrossEntropySum { logits, targets, probs } => {
                    let up = g.data()[0];
                    let gl = acc(&mut grads, *logits, probs.shape());
                    for (r, &t) in targets.iter().enumerate() {
                        let o = gl.row_mut(r);
                        for (c, ov) in o.iter_mut().enumerate() {
                            let p = probs.row(r)[c];
                            *ov += up * if c == t { p - T::one() } else { p };
                        }
                    }
                }
                Op::LogSigmoid(a) => {
                    let va = self.value(*a);
                    let ga = acc(&mut grads, *a, g.shape());
                    for ((o, &x), &gv) in ga.data_mut().iter_mut().zip(va.data()).zip(g.data()) {
                        *o += gv * sigmoid(-x);
                    }
                }
                Op::Log1mExp(a) => {
                    let va = self.value(*a);
                    let ga = acc(&mut grads, *a, g.shape());
                    for ((o, &x), &gv) in ga.data_mut().iter_mut().zip(va.data()).zip(g.data()) {
                        let x = clamp_neg(x);
                        *o += gv * (-T::one() / (-x).exp_m1());
                    }
                }
                Op::MeanRows(a) => {
                    let shape = self.value(*a).shape();
                    let n = T::of(shape.0 as f64);
                    let ga = acc(&mut grads, *a, shape);
                    for r in 0..shape.0 {
                        for (o, &v) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o += v / n;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let up = g.data()[0];
                    let shape = self.value(*a).shape();
                    let ga = acc(&mut grads, *a, shape);
                    for o in ga.data_mut() {
                        *o += up;
                    }
                }
                Op::RepeatRows(a) => {
                    let cols = g.cols();
                    let ga = acc(&mut grads, *a, (1, cols));
                    for r in 0..g.rows() {
                        for (o, &v) in ga.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::Dropout { x, keep } => {
                    let gx = acc(&mut grads, *x, g.shape());
                    for ((o, &k), &gv) in gx.data_mut().iter_mut().zip(keep.data()).zip(g.data()) {
                        *o += k * gv;
                    }
                }
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, shape: (usize, usize)) -> &mut Matrix<T> {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn clamp_neg<T: Scalar>(x: T) -> T {
    x.min(-T::epsilon())
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_sigmoid<T: Scalar>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

pub(crate) fn log1m_exp<T: Scalar>(x: T) -> T {
    if x > -T::of(std::f64::consts::LN_2) {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, Initializer};

    /// Central-difference check of one tape-built scalar function against the
    /// analytic gradient, over every coordinate of every parameter.
    fn check(store: &mut ParamStore<f64>, f: impl Fn(&mut Tape<f64>) -> Var) {
        let analytic = {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            tape.backward(loss)
        };
        let eps = 1e-6;
        for id in store.ids().collect::<Vec<_>>() {
            let g = analytic.iter().find(|(i, _)| *i == id).map(|(_, g)| g.clone());
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data()[k];
                store.get_mut(id).data_mut()[k] = orig + eps;
                let up = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                store.get_mut(id).data_mut()[k] = orig - eps;
                let down = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                store.get_mut(id).data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = g.as_ref().map_or(0.0, |g| g.data()[k]);
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "{} [{k}]: analytic {a} numeric {numeric}",
                    store.name(id)
                );
            }
        }
    }

    fn store(shapes: &[(&str, usize, usize)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let mut init = Initializer::new(&mut s, 11);
        for &(n, r, c) in shapes {
            init.add(n, r, c, Init::Normal(0.7));
        }
        s
    }

    #[test]
    fn matmul_family_gradients() {
        let mut s = store(&[("a", 3, 4), ("b", 4, 2), ("c", 5, 4), ("bias", 1, 2)]);
        let ids: Vec<_> = s.ids().collect();
        check(&mut s, |t| {
            let (a, b, c, bias) = (t.param(ids[0]), t.param(ids[1]), t.param(ids[2]), t.param(ids[3]));
            let ab = t.matmul(a, b);
            let ab = t.add_row(ab, bias);
            let act = t.gelu(ab);
            let nt = t.matmul_nt(a, c);
            let th = t.tanh(nt);
            let x = t.concat_cols(&[act, th]);
            let y = t.scale(x, 0.3);
            let z = t.slice_cols(y, 1, 4);
            let sq = t.matmul_nt(z, z);
            t.sum_all(sq)
        });
    }

    #[test]
    fn normalisation_and_softmax_gradients() {
        let mut s = store(&[("x", 4, 5), ("g", 1, 5), ("b", 1, 5), ("w", 5, 5)]);
        let ids: Vec<_> = s.ids().collect();
        let mask: Arc<Vec<bool>> = Arc::new((0..16).map(|i| i % 4 <= i / 4).collect());
        check(&mut s, |t| {
            let (x, g, b, w) = (t.param(ids[0]), t.param(ids[1]), t.param(ids[2]), t.param(ids[3]));
            let h = t.layer_norm(x, g, b);
            let hw = t.matmul(h, w);
            let scores = t.matmul_nt(hw, h);
            let p = t.masked_softmax(scores, mask.clone());
            let o = t.matmul(p, hw);
            let m = t.mean_rows(o);
            let rep = t.repeat_rows(m, 3);
            let cat = t.concat_rows(&[rep, o]);
            let sq = t.matmul_nt(cat, cat);
            t.sum_all(sq)
        });
    }

    #[test]
    fn loss_head_gradients() {
        let mut s = store(&[("logits", 3, 6), ("table", 4, 3)]);
        let ids: Vec<_> = s.ids().collect();
        check(&mut s, |t| {
            let (l, tab) = (t.param(ids[0]), t.param(ids[1]));
            let ce = t.cross_entropy_sum(l, Arc::new(vec![0, 5, 2]));
            let g = t.gather(tab, Arc::new(vec![Some(1), None, Some(1), Some(3)]));
            let shifted = t.scale(g, 2.0);
            let ls = t.log_sigmoid(shifted);
            let m = t.mean_rows(ls);
            let neg = t.log1m_exp(m);
            let s1 = t.sum_all(neg);
            let s2 = t.sum_all(ls);
            let both = t.concat_rows(&[ce, s1, s2]);
            t.sum_all(both)
        });
    }

    #[test]
    fn stable_log_helpers() {
        assert!((log_sigmoid(0.0f64) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_sigmoid(-800.0f64).is_finite());
        assert_eq!(log_sigmoid(800.0f64), 0.0);
        assert!((log1m_exp(-1e-3f64) - (1.0 - (-1e-3f64).exp()).ln()).abs() < 1e-12);
        assert!((log1m_exp(-5.0f64) - (1.0 - (-5.0f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn dropout_is_identity_on_inference_tapes() {
        let s = store(&[("x", 2, 3)]);
        let id = s.ids().next().unwrap();
        let mut t = Tape::new(&s);
        let x = t.param(id);
        assert_eq!(t.dropout(x), x);
        let mut t = Tape::training(&s, 0.5, 3);
        let x = t.param(id);
        let y = t.dropout(x);
        assert_ne!(x, y);
    }
}
