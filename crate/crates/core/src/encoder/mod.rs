//! Masked multi-head Transformer encoder over lattices.
//!
//! Each layer computes, per head `k`,
//! `H_k = softmax(dropout(Q_k K_kᵀ / √d_head + M_k)) V_k`, concatenates the
//! heads, and applies `L = LN[dropout(H) + X]`, `Y = LN[dropout(FF(L)) + L]`.
//! The reachability mask is added after the similarity scaling, so that a
//! probabilistic mask contributes exactly a factor `p` to the unnormalized
//! attention weight.

mod trace;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::lattice::Lattice;
use crate::masks::{binary_masks, compute_marginals, head_masks, prob_masks, HeadStrategy};
use crate::masks::{MarginalVector, MaskMatrix};
use crate::numerics::{feed_forward, FeedForward, Graph, LayerNormParams, ParamId, ParamStore};
use crate::numerics::{SplitRng, Tensor, Var};

pub use trace::AttentionTrace;

/// Which reachability mask the attention heads use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSetting {
    Binary,
    Probabilistic,
    /// No masking: every node attends to every node.
    None,
}

/// How node positions are assigned before the position embedding lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionKind {
    LongestPath,
    /// Index within the topological order.
    Topological,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub mask_kind: MaskSetting,
    pub direction: HeadStrategy,
    pub positions: PositionKind,
    pub max_position: usize,
    /// Scale similarities by `1/√(d_model/n_heads)`; otherwise by `1/√d_model`.
    #[serde(default = "default_true")]
    pub scale_by_head_dim: bool,
}

fn default_true() -> bool {
    true
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 3,
            d_ff: 256,
            dropout: 0.1,
            mask_kind: MaskSetting::Probabilistic,
            direction: HeadStrategy::Directional,
            positions: PositionKind::LongestPath,
            max_position: 128,
            scale_by_head_dim: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.direction == HeadStrategy::Directional && !self.n_heads.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "directional masking needs an even number of heads, got {}",
                self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if self.max_position == 0 || self.d_ff == 0 {
            return Err(ModelError::Config(
                "max_position and d_ff must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn score_scale(&self) -> f64 {
        let d = if self.scale_by_head_dim {
            self.head_dim()
        } else {
            self.d_model
        };
        1.0 / (d as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
struct HeadParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

#[derive(Debug, Clone)]
struct LayerParams {
    heads: Vec<HeadParams>,
    ff: FeedForward,
    ln1: LayerNormParams,
    ln2: LayerNormParams,
}

/// Encoder parameters, registered in a shared [`ParamStore`] under `enc.*`.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    config: EncoderConfig,
    vocab_size: usize,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerParams>,
}

/// Everything the encoder needs from a lattice, computed once and reused
/// across epochs.
#[derive(Debug, Clone)]
pub struct PreparedLattice {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    /// One additive `n×n` mask per head, rows are queries.
    pub masks: Vec<Tensor>,
    pub marginals: MarginalVector,
}

impl PreparedLattice {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn mask_tensor(m: &MaskMatrix) -> Tensor {
    Tensor::matrix(m.n(), m.n(), m.data().to_vec()).expect("mask is square")
}

impl EncoderStack {
    pub fn new(
        config: EncoderConfig,
        vocab_size: usize,
        store: &mut ParamStore,
        rng: &mut SplitRng,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let dh = config.head_dim();
        let emb_std = (d as f64).powf(-0.5);
        let tok_emb = store.add_normal("enc.tok_emb", vocab_size, d, emb_std, rng)?;
        let pos_emb = store.add_normal("enc.pos_emb", config.max_position, d, emb_std, rng)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let mut heads = Vec::with_capacity(config.n_heads);
            for h in 0..config.n_heads {
                let p = format!("enc.l{l}.h{h}");
                heads.push(HeadParams {
                    wq: store.add_glorot(format!("{p}.wq"), d, dh, rng)?,
                    wk: store.add_glorot(format!("{p}.wk"), d, dh, rng)?,
                    wv: store.add_glorot(format!("{p}.wv"), d, dh, rng)?,
                });
            }
            layers.push(LayerParams {
                heads,
                ff: FeedForward::new(store, &format!("enc.l{l}.ff"), d, config.d_ff, rng)?,
                ln1: LayerNormParams::new(store, &format!("enc.l{l}.ln1"), d)?,
                ln2: LayerNormParams::new(store, &format!("enc.l{l}.ln2"), d)?,
            });
        }
        Ok(EncoderStack {
            config,
            vocab_size,
            tok_emb,
            pos_emb,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Computes positions, per-head masks and marginals for `l`. `ids` are
    /// the vocabulary indices of the node tokens, in node-id order.
    pub fn prepare(&self, l: &Lattice, ids: Vec<usize>) -> Result<PreparedLattice, ModelError> {
        let c = &self.config;
        if ids.len() != l.len() {
            return Err(ModelError::Config(format!(
                "{} token ids for a lattice of {} nodes",
                ids.len(),
                l.len()
            )));
        }
        let positions = match c.positions {
            PositionKind::LongestPath => l.longest_path_positions().0,
            PositionKind::Topological => l.topological_positions(),
            PositionKind::None => vec![0; l.len()],
        };
        if let Some((node, &position)) = positions
            .iter()
            .enumerate()
            .find(|(_, &p)| p >= c.max_position)
        {
            return Err(ModelError::PositionOverflow {
                node,
                position,
                max_position: c.max_position,
            });
        }
        let masks = match c.mask_kind {
            MaskSetting::None => vec![Tensor::zeros(&[l.len(), l.len()]); c.n_heads],
            kind => {
                let (fwd, bwd) = if kind == MaskSetting::Binary {
                    binary_masks(l)
                } else {
                    prob_masks(l)
                };
                head_masks(&fwd, &bwd, c.n_heads, c.direction)?
                    .iter()
                    .map(mask_tensor)
                    .collect()
            }
        };
        Ok(PreparedLattice {
            ids,
            positions,
            masks,
            marginals: compute_marginals(l),
        })
    }

    /// `x'_i = dropout(emb[token_i] + E[pos_i])`.
    pub fn embed_inputs(
        &self,
        g: &mut Graph<'_>,
        prep: &PreparedLattice,
    ) -> Result<Var, ModelError> {
        self.embed(g, &prep.ids, &prep.positions)
    }

    fn embed(
        &self,
        g: &mut Graph<'_>,
        ids: &[usize],
        positions: &[usize],
    ) -> Result<Var, ModelError> {
        let tok = g.param(self.tok_emb);
        let x = g.gather_rows(tok, ids)?;
        let x = if self.config.positions == PositionKind::None {
            x
        } else {
            let pos = g.param(self.pos_emb);
            let e = g.gather_rows(pos, positions)?;
            g.add(x, e)?
        };
        Ok(g.dropout(x, self.config.dropout)?)
    }

    /// One encoder layer. `masks` holds one additive mask per head.
    pub fn encoder_layer(
        &self,
        g: &mut Graph<'_>,
        layer: usize,
        x: Var,
        masks: &[Var],
        trace: Option<&mut AttentionTrace>,
    ) -> Result<Var, ModelError> {
        let n = g.value(x).rows();
        self.layer_segments(g, layer, x, &[(0, n, masks)], trace)
    }

    /// An encoder layer over row-stacked sentences. Each segment is
    /// `(first row, rows, per-head masks)`; attention stays within a
    /// segment while the position-wise parts run on the whole stack.
    fn layer_segments(
        &self,
        g: &mut Graph<'_>,
        layer: usize,
        x: Var,
        segments: &[(usize, usize, &[Var])],
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var, ModelError> {
        let c = &self.config;
        let lp = &self.layers[layer];
        if let Some((_, _, m)) = segments.iter().find(|s| s.2.len() != c.n_heads) {
            return Err(ModelError::Config(format!(
                "{} masks for {} heads",
                m.len(),
                c.n_heads
            )));
        }
        let scale = c.score_scale();
        let dh = c.head_dim();
        // All query, key and value projections of the layer as one product.
        let mut w = Vec::with_capacity(3 * c.n_heads);
        for pick in [
            |h: &HeadParams| h.wq,
            |h: &HeadParams| h.wk,
            |h: &HeadParams| h.wv,
        ] {
            for hp in &lp.heads {
                w.push(g.param(pick(hp)));
            }
        }
        let w = g.concat_cols(&w)?;
        let qkv_all = g.matmul(x, w)?;
        let total = g.value(x).rows();
        let d = c.d_model;
        let mut outs = Vec::with_capacity(segments.len());
        for &(lo, rows, masks) in segments {
            let qkv = if rows == total {
                qkv_all
            } else {
                g.slice_rows(qkv_all, lo, lo + rows)?
            };
            let mut heads = Vec::with_capacity(c.n_heads);
            for h in 0..c.n_heads {
                let q = g.slice_cols(qkv, h * dh, (h + 1) * dh)?;
                let k = g.slice_cols(qkv, d + h * dh, d + (h + 1) * dh)?;
                let v = g.slice_cols(qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh)?;
                let s = g.matmul_nt(q, k)?;
                let s = g.scale(s, scale);
                let s = g.add(s, masks[h])?;
                let s = g.dropout(s, c.dropout)?;
                let a = g.softmax_rows(s)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.record(layer, h, g.value(a).clone());
                }
                heads.push(g.matmul(a, v)?);
            }
            outs.push(g.concat_cols(&heads)?);
        }
        let hcat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_rows(&outs)?
        };
        let hd = g.dropout(hcat, c.dropout)?;
        let res = g.add(hd, x)?;
        let l = lp.ln1.apply(g, res)?;
        let f = feed_forward(g, l, &lp.ff)?;
        let fd = g.dropout(f, c.dropout)?;
        let res = g.add(fd, l)?;
        Ok(lp.ln2.apply(g, res)?)
    }

    pub fn encode(&self, g: &mut Graph<'_>, prep: &PreparedLattice) -> Result<Var, ModelError> {
        self.encode_traced(g, prep, None)
    }

    /// [`EncoderStack::encode`] that also records attention weights.
    pub fn encode_traced(
        &self,
        g: &mut Graph<'_>,
        prep: &PreparedLattice,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var, ModelError> {
        let masks: Vec<Var> = prep.masks.iter().map(|m| g.constant(m.clone())).collect();
        let mut x = self.embed_inputs(g, prep)?;
        for layer in 0..self.layers.len() {
            x = self.encoder_layer(g, layer, x, &masks, trace.as_deref_mut())?;
        }
        Ok(x)
    }

    /// Encodes several lattices at once: position-wise products run on the
    /// row-stacked batch, attention per lattice. The result stacks the
    /// encodings in batch order. Without dropout it equals the stacked
    /// results of [`EncoderStack::encode`].
    pub fn encode_batch(
        &self,
        g: &mut Graph<'_>,
        batch: &[&PreparedLattice],
    ) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let masks: Vec<Vec<Var>> = batch
            .iter()
            .map(|p| p.masks.iter().map(|m| g.constant(m.clone())).collect())
            .collect();
        let mut segments = Vec::with_capacity(batch.len());
        let mut lo = 0;
        for (p, m) in batch.iter().zip(&masks) {
            segments.push((lo, p.len(), m.as_slice()));
            lo += p.len();
        }
        let ids: Vec<usize> = batch.iter().flat_map(|p| p.ids.iter().copied()).collect();
        let positions: Vec<usize> = batch
            .iter()
            .flat_map(|p| p.positions.iter().copied())
            .collect();
        let mut x = self.embed(g, &ids, &positions)?;
        for layer in 0..self.layers.len() {
            x = self.layer_segments(g, layer, x, &segments, None)?;
        }
        Ok(x)
    }
}
