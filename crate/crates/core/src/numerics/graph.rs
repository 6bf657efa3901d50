//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied during a forward pass. Leaves
//! are either constants or parameters borrowed from a [`ParamStore`];
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every parameter, accumulating additively when a parameter is used more
//! than once.

use super::params::{GradBuffer, ParamId, ParamStore};
use super::rng::SplitRng;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::TensorError;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// Matrix plus a broadcast `1×n` row.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Source and first row.
    SliceRows(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Dropout(Var, Vec<f64>),
    SmoothedXent {
        logits: Var,
        targets: Vec<usize>,
        eps: f64,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-6;

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    mode: Mode,
    rng: SplitRng,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode, rng: SplitRng) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
            mode,
            rng,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.tensor(*id),
            _ => unreachable!("only parameter nodes borrow their value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.require_matrix("matmul_nt")?;
        let (n, k2) = tb.require_matrix("matmul_nt")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul_nt",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(ta.data(), tb.data(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNT(a, b), ng))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, op_name)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = ta.require_matrix("add_row")?;
        if tr.len() != n {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for (d, r) in data[i * n..(i + 1) * n].iter_mut().zip(tr.data()) {
                *d += r;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * s).collect())
            .expect("same shape");
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.require_matrix("concat_cols")?;
            if r != rows {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.require_matrix("concat_rows")?;
            if c != cols {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
            rows += r;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Columns `lo..hi`.
    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (r, c) = t.require_matrix("slice_cols")?;
        if lo > hi || hi > c {
            return Err(TensorError::Shape {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![lo, hi],
            });
        }
        let mut data = Vec::with_capacity(r * (hi - lo));
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[lo..hi]);
        }
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::matrix(r, hi - lo, data)?,
            Op::SliceCols(a, lo, hi),
            ng,
        ))
    }

    /// Row-wise softmax. `-inf` inputs receive exactly zero weight.
    /// Rows `lo..hi`.
    pub fn slice_rows(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (r, c) = t.require_matrix("slice_rows")?;
        if lo > hi || hi > r {
            return Err(TensorError::Shape {
                op: "slice_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![lo, hi],
            });
        }
        let data = t.data()[lo * c..hi * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(hi - lo, c, data)?, Op::SliceRows(a, lo), ng))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (r, c) = t.require_matrix("softmax_rows")?;
        let mut data = t.data().to_vec();
        for i in 0..r {
            softmax_in_place(&mut data[i * c..(i + 1) * c])
                .ok_or(TensorError::FullyMaskedRow { row: i })?;
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::SoftmaxRows(a), ng))
    }

    /// `softmax(scores + mask)` row-wise.
    pub fn masked_softmax_rows(&mut self, scores: Var, mask: Var) -> Result<Var, TensorError> {
        let z = self.add(scores, mask)?;
        self.softmax_rows(z)
    }

    /// Per-row layer normalization followed by an elementwise affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (r, c) = t.require_matrix("layer_norm")?;
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != c || tb.len() != c {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: t.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[i * c + j] = h;
                out[i * c + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            Tensor::matrix(r, c, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        let (r, c) = t.require_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(TensorError::Index { index: i, len: r });
            }
            data.extend_from_slice(t.row(i));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::matrix(idx.len(), c, data)?,
            Op::Gather(table, idx.to_vec()),
            ng,
        ))
    }

    /// Column means as a `1×n` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (r, c) = t.require_matrix("mean_rows")?;
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (d, v) in data.iter_mut().zip(t.row(i)) {
                *d += v;
            }
        }
        for d in data.iter_mut() {
            *d /= r as f64;
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(1, c, data)?, Op::MeanRows(a), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Inverted dropout. Identity in inference mode or at rate 0. Entries
    /// equal to `-inf` pass through unchanged and are never dropped.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::DropoutRate(rate));
        }
        if self.mode == Mode::Infer || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).len();
        let mult: Vec<f64> = (0..n)
            .map(|_| if self.rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(a);
        let data = t
            .data()
            .iter()
            .zip(&mult)
            .map(|(&x, &m)| if x == f64::NEG_INFINITY { x } else { x * m })
            .collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Dropout(a, mult), ng))
    }

    /// Summed cross-entropy of `logits` (rows = steps) against `targets`,
    /// with the target distribution smoothed to `(1-eps)·onehot + eps/V`.
    pub fn smoothed_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        eps: f64,
    ) -> Result<Var, TensorError> {
        let t = self.value(logits);
        let (r, v) = t.require_matrix("smoothed_cross_entropy")?;
        if targets.len() != r {
            return Err(TensorError::Shape {
                op: "smoothed_cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for i in 0..r {
            let row = &t.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let y = targets[i];
            if y >= v {
                return Err(TensorError::Index { index: y, len: v });
            }
            let mean_logp = row.iter().map(|x| x - lse).sum::<f64>() / v as f64;
            loss -= (1.0 - eps) * (row[y] - lse) + eps * mean_logp;
            for j in 0..v {
                probs[i * v + j] = (row[j] - lse).exp();
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothedXent {
                logits,
                targets: targets.to_vec(),
                eps,
                probs,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradBuffer, TensorError> {
        let mut buf = GradBuffer::zeros_like(self.store);
        self.backward_into(loss, &mut buf)?;
        Ok(buf)
    }

    /// Reverse pass that adds parameter gradients into `buf`.
    pub fn backward_into(&self, loss: Var, buf: &mut GradBuffer) -> Result<(), TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let out = node.value.as_ref();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => buf.add(*id, &g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.rows(), ta.cols());
                    let n = tb.cols();
                    if self.ng(*a) {
                        let mut d = vec![0.0; m * k];
                        gemm_nt(g.data(), tb.data(), &mut d, m, n, k);
                        self.acc(&mut grads, *a, d);
                    }
                    if self.ng(*b) {
                        let mut d = vec![0.0; k * n];
                        gemm_tn(ta.data(), g.data(), &mut d, m, k, n);
                        self.acc(&mut grads, *b, d);
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.rows(), ta.cols());
                    let n = tb.rows();
                    if self.ng(*a) {
                        let mut d = vec![0.0; m * k];
                        gemm_nn(g.data(), tb.data(), &mut d, m, n, k);
                        self.acc(&mut grads, *a, d);
                    }
                    if self.ng(*b) {
                        let mut d = vec![0.0; n * k];
                        gemm_tn(g.data(), ta.data(), &mut d, m, n, k);
                        self.acc(&mut grads, *b, d);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, g.data().to_vec());
                    }
                    if self.ng(*b) {
                        self.acc(&mut grads, *b, g.data().to_vec());
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, g.data().to_vec());
                    }
                    if self.ng(*row) {
                        let c = g.cols();
                        let mut d = vec![0.0; c];
                        for i in 0..g.rows() {
                            for (x, y) in d.iter_mut().zip(g.row(i)) {
                                *x += y;
                            }
                        }
                        self.acc(&mut grads, *row, d);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                        self.acc(&mut grads, *a, d);
                    }
                    if self.ng(*b) {
                        let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                        self.acc(&mut grads, *b, d);
                    }
                }
                Op::Scale(a, s) => {
                    let d = g.data().iter().map(|x| x * s).collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.ng(p) {
                            let mut d = Vec::with_capacity(rows * c);
                            for i in 0..rows {
                                d.extend_from_slice(
                                    &g.data()[i * total + offset..i * total + offset + c],
                                );
                            }
                            self.acc(&mut grads, p, d);
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.ng(p) {
                            self.acc(&mut grads, p, g.data()[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                }
                Op::SliceCols(a, lo, hi) => {
                    let c = self.value(*a).cols();
                    let w = hi - lo;
                    let d = self.grad_slot(&mut grads, *a).data_mut();
                    for (i, src) in g.data().chunks(w).enumerate() {
                        for (x, y) in d[i * c + lo..i * c + hi].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
                Op::SliceRows(a, lo) => {
                    let c = self.value(*a).cols();
                    let d = self.grad_slot(&mut grads, *a).data_mut();
                    for (x, y) in d[lo * c..].iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(ta.data())
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let y = out.expect("computed value");
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, s)| gv * s * (1.0 - s))
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let y = out.expect("computed value");
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, t)| gv * (1.0 - t * t))
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = out.expect("computed value");
                    let (r, c) = (y.rows(), y.cols());
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let tg = self.value(*gain);
                    let c = tg.len();
                    let r = inv_std.len();
                    if self.ng(*gain) {
                        let mut d = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                d[j] += g.data()[i * c + j] * xhat[i * c + j];
                            }
                        }
                        self.acc(&mut grads, *gain, d);
                    }
                    if self.ng(*bias) {
                        let mut d = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                d[j] += g.data()[i * c + j];
                            }
                        }
                        self.acc(&mut grads, *bias, d);
                    }
                    if self.ng(*x) {
                        let mut d = vec![0.0; r * c];
                        for i in 0..r {
                            let mut mean_dh = 0.0;
                            let mut mean_dh_h = 0.0;
                            for j in 0..c {
                                let dh = g.data()[i * c + j] * tg.data()[j];
                                mean_dh += dh;
                                mean_dh_h += dh * xhat[i * c + j];
                            }
                            mean_dh /= c as f64;
                            mean_dh_h /= c as f64;
                            for j in 0..c {
                                let dh = g.data()[i * c + j] * tg.data()[j];
                                d[i * c + j] =
                                    inv_std[i] * (dh - mean_dh - xhat[i * c + j] * mean_dh_h);
                            }
                        }
                        self.acc(&mut grads, *x, d);
                    }
                }
                Op::Gather(table, idx) => {
                    let tt = self.value(*table);
                    let c = tt.cols();
                    // Embedding tables: scatter straight into the buffer
                    // instead of materializing a table-sized gradient.
                    if let Op::Param(id) = self.nodes[table.0].op {
                        let dst = buf.get_mut(id).data_mut();
                        for (row, &i) in idx.iter().enumerate() {
                            for (a, b) in dst[i * c..(i + 1) * c]
                                .iter_mut()
                                .zip(&g.data()[row * c..(row + 1) * c])
                            {
                                *a += b;
                            }
                        }
                        continue;
                    }
                    let mut d = vec![0.0; tt.len()];
                    for (row, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            d[i * c + j] += g.data()[row * c + j];
                        }
                    }
                    self.acc(&mut grads, *table, d);
                }
                Op::MeanRows(a) => {
                    let ta = self.value(*a);
                    let (r, c) = (ta.rows(), ta.cols());
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] = g.data()[j] / r as f64;
                        }
                    }
                    self.acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    self.acc(&mut grads, *a, vec![g.item(); n]);
                }
                Op::Dropout(a, mult) => {
                    let ta = self.value(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(mult)
                        .zip(ta.data())
                        .map(|((gv, m), x)| if *x == f64::NEG_INFINITY { 0.0 } else { gv * m })
                        .collect();
                    self.acc(&mut grads, *a, d);
                }
                Op::SmoothedXent {
                    logits,
                    targets,
                    eps,
                    probs,
                } => {
                    let v = self.value(*logits).cols();
                    let up = g.item();
                    let mut d = probs.clone();
                    let floor = eps / v as f64;
                    for (i, &y) in targets.iter().enumerate() {
                        for j in 0..v {
                            d[i * v + j] -= floor;
                        }
                        d[i * v + y] -= 1.0 - eps;
                    }
                    for x in d.iter_mut() {
                        *x *= up;
                    }
                    self.acc(&mut grads, *logits, d);
                }
            }
        }
        Ok(())
    }

    /// The gradient of `v`, created as zeros on first use.
    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()))
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, d: Vec<f64>) {
        match &mut grads[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(&d) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(Tensor::new(shape, d).expect("gradient shape matches value"));
            }
        }
    }
}

/// In-place softmax of one row; `None` when every entry is `-inf`.
pub fn softmax_in_place(row: &mut [f64]) -> Option<()> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Some(())
}
