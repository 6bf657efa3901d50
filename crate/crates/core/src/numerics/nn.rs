use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::rng::SplitRng;
use crate::error::TensorError;

/// `x · W + b` with `b` broadcast over rows.
pub fn linear(g: &mut Graph<'_>, x: Var, w: ParamId, b: ParamId) -> Result<Var, TensorError> {
    let (w, b) = (g.param(w), g.param(b));
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Position-wise feed-forward block parameters.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut SplitRng,
    ) -> Result<Self, TensorError> {
        Ok(FeedForward {
            w1: store.add_glorot(format!("{prefix}.w1"), d_model, d_ff, rng)?,
            b1: store.add_constant(format!("{prefix}.b1"), 1, d_ff, 0.0)?,
            w2: store.add_glorot(format!("{prefix}.w2"), d_ff, d_model, rng)?,
            b2: store.add_constant(format!("{prefix}.b2"), 1, d_model, 0.0)?,
        })
    }
}

/// `max(0, x W1 + b1) W2 + b2`, row-wise.
pub fn feed_forward(g: &mut Graph<'_>, x: Var, ff: &FeedForward) -> Result<Var, TensorError> {
    let h = linear(g, x, ff.w1, ff.b1)?;
    let h = g.relu(h);
    linear(g, h, ff.w2, ff.b2)
}

/// Gain and bias of a layer norm.
#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self, TensorError> {
        Ok(LayerNormParams {
            gain: store.add_constant(format!("{prefix}.gain"), 1, d, 1.0)?,
            bias: store.add_constant(format!("{prefix}.bias"), 1, d, 0.0)?,
        })
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, TensorError> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }
}

/// LSTM cell parameters; gate column blocks are input, forget, output, and
/// candidate, each `hidden` wide.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    /// Glorot weights, zero bias except a forget-gate bias of 1.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut SplitRng,
    ) -> Result<Self, TensorError> {
        let w_x = store.add_glorot(format!("{prefix}.w_x"), input, 4 * hidden, rng)?;
        let w_h = store.add_glorot(format!("{prefix}.w_h"), hidden, 4 * hidden, rng)?;
        let b = store.add_constant(format!("{prefix}.b"), 1, 4 * hidden, 0.0)?;
        store.tensor_mut(b).data_mut()[hidden..2 * hidden].fill(1.0);
        Ok(LstmParams {
            w_x,
            w_h,
            b,
            hidden,
        })
    }

    /// One step on a `1×input` row; returns the new `(hidden, cell)`.
    pub fn step(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var), TensorError> {
        let n = self.hidden;
        let (w_x, w_h, b) = (g.param(self.w_x), g.param(self.w_h), g.param(self.b));
        let gx = g.matmul(x, w_x)?;
        let gh = g.matmul(h, w_h)?;
        let gates = g.add(gx, gh)?;
        let gates = g.add_row(gates, b)?;
        let i = g.slice_cols(gates, 0, n)?;
        let f = g.slice_cols(gates, n, 2 * n)?;
        let o = g.slice_cols(gates, 2 * n, 3 * n)?;
        let u = g.slice_cols(gates, 3 * n, 4 * n)?;
        let (i, f, o, u) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o), g.tanh(u));
        let keep = g.mul(f, c)?;
        let write = g.mul(i, u)?;
        let cell = g.add(keep, write)?;
        let tc = g.tanh(cell);
        let hidden = g.mul(o, tc)?;
        Ok((hidden, cell))
    }
}
