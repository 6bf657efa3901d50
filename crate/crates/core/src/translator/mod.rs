//! Lattice-to-sequence model: the lattice encoder, an LSTM decoder with input
//! feeding, and cross-attention biased by log node marginals.

mod corpus;
mod metrics;
mod search;
mod train;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderStack, PreparedLattice};
use crate::error::ModelError;
use crate::lattice::Lattice;
use crate::numerics::{
    linear, read_checkpoint, write_checkpoint, Graph, LstmParams, Mode, ParamId, ParamStore,
};
use crate::numerics::{SplitRng, Tensor, Var};
use crate::vocab::{Vocab, BOS, EOS};

pub use corpus::{read_corpus, read_source_line, read_targets, Example};
pub use metrics::{corpus_bleu, token_accuracy, Scores};
pub use search::max_output_len;
pub use train::{
    accumulate_gradients, train, EpochLog, Phase, Prepared, TrainSchedule, TrainSummary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// LSTM hidden size.
    pub d_hidden: usize,
    pub d_tgt_emb: usize,
    /// Dropout on decoder inputs and on the pre-output layer.
    pub decoder_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            d_hidden: 64,
            d_tgt_emb: 64,
            decoder_dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderParams {
    emb: ParamId,
    lstm: LstmParams,
    init_h_w: ParamId,
    init_h_b: ParamId,
    init_c_w: ParamId,
    init_c_b: ParamId,
    w_att: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Recurrent decoder memory plus the previous attention context.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
    pub feed: Var,
}

pub struct Model {
    config: ModelConfig,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    encoder: EncoderStack,
    decoder: DecoderParams,
    store: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
}

/// Lattice-biased attention: weights `∝ exp(q·enc_j + log_marginal_j)`.
/// `query` is `1×d`, `enc` is `n×d`, `log_marginals` a `1×n` constant.
/// Returns `(context, weights)`.
pub fn cross_attention(
    g: &mut Graph<'_>,
    query: Var,
    enc: Var,
    log_marginals: Var,
) -> Result<(Var, Var), ModelError> {
    let rows = g.value(enc).rows();
    let m = g.value(log_marginals).len();
    if rows != m {
        return Err(ModelError::MarginalLength { marginals: m, rows });
    }
    let scores = g.matmul_nt(query, enc)?;
    let scores = g.add(scores, log_marginals)?;
    let w = g.softmax_rows(scores)?;
    let ctx = g.matmul(w, enc)?;
    Ok((ctx, w))
}

impl Model {
    pub fn new(
        config: ModelConfig,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&config.decoder_dropout) {
            return Err(ModelError::Config(format!(
                "decoder dropout {} not in [0, 1)",
                config.decoder_dropout
            )));
        }
        let mut rng = SplitRng::new(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderStack::new(
            config.encoder.clone(),
            src_vocab.len(),
            &mut store,
            &mut rng,
        )?;
        let d = config.encoder.d_model;
        let (h, e, v) = (config.d_hidden, config.d_tgt_emb, tgt_vocab.len());
        let decoder = DecoderParams {
            emb: store.add_normal("dec.emb", v, e, (e as f64).powf(-0.5), &mut rng)?,
            lstm: LstmParams::new(&mut store, "dec.lstm", e + d, h, &mut rng)?,
            init_h_w: store.add_glorot("dec.init_h.w", d, h, &mut rng)?,
            init_h_b: store.add_constant("dec.init_h.b", 1, h, 0.0)?,
            init_c_w: store.add_glorot("dec.init_c.w", d, h, &mut rng)?,
            init_c_b: store.add_constant("dec.init_c.b", 1, h, 0.0)?,
            w_att: store.add_glorot("dec.att.w", h, d, &mut rng)?,
            out_w: store.add_glorot("dec.out.w", h + d, v, &mut rng)?,
            out_b: store.add_constant("dec.out.b", 1, v, 0.0)?,
        };
        Ok(Model {
            config,
            src_vocab,
            tgt_vocab,
            encoder,
            decoder,
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn src_vocab(&self) -> &Vocab {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocab {
        &self.tgt_vocab
    }

    pub fn encoder(&self) -> &EncoderStack {
        &self.encoder
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces the encoder configuration by one with identical parameter
    /// shapes (mask kind, head strategy, positions, dropout).
    pub fn set_encoder_config(&mut self, config: EncoderConfig) -> Result<(), ModelError> {
        let old = &self.config.encoder;
        let same_shapes = (
            config.d_model,
            config.n_heads,
            config.n_layers,
            config.d_ff,
            config.max_position,
        ) == (
            old.d_model,
            old.n_heads,
            old.n_layers,
            old.d_ff,
            old.max_position,
        );
        if !same_shapes {
            return Err(ModelError::Config("encoder shapes differ".into()));
        }
        config.validate()?;
        let mut fresh = ParamStore::new();
        self.encoder = EncoderStack::new(
            config.clone(),
            self.src_vocab.len(),
            &mut fresh,
            &mut SplitRng::new(0),
        )?;
        self.config.encoder = config;
        Ok(())
    }

    pub fn prepare(&self, l: &Lattice) -> Result<PreparedLattice, ModelError> {
        let ids = self.src_vocab.ids(l.tokens());
        self.encoder.prepare(l, ids)
    }

    pub fn target_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        self.tgt_vocab.ids(tokens)
    }

    /// Decoder state from the mean encoder row: `h = tanh(A m + a)`,
    /// `c = B m + b`, and a zero attention context.
    pub fn initial_state(&self, g: &mut Graph<'_>, enc: Var) -> Result<DecoderState, ModelError> {
        let p = &self.decoder;
        let mean = g.mean_rows(enc)?;
        let h = linear(g, mean, p.init_h_w, p.init_h_b)?;
        let hidden = g.tanh(h);
        let cell = linear(g, mean, p.init_c_w, p.init_c_b)?;
        let feed = g.constant(Tensor::zeros(&[1, self.config.encoder.d_model]));
        Ok(DecoderState { hidden, cell, feed })
    }

    /// One decoder step: the LSTM consumes `[emb(prev); feed]`, attends over
    /// `enc` with the new hidden state, and produces vocabulary logits from
    /// `[hidden; context]`. Also returns the attention weights.
    pub fn decode_step(
        &self,
        g: &mut Graph<'_>,
        state: DecoderState,
        prev: usize,
        enc: Var,
        log_marginals: Var,
    ) -> Result<(DecoderState, Var, Var), ModelError> {
        let p = &self.decoder;
        let rate = self.config.decoder_dropout;
        let emb = g.param(p.emb);
        let x = g.gather_rows(emb, &[prev])?;
        let x = g.dropout(x, rate)?;
        let x = g.concat_cols(&[x, state.feed])?;
        let (hidden, cell) = p.lstm.step(g, x, state.hidden, state.cell)?;
        let w_att = g.param(p.w_att);
        let q = g.matmul(hidden, w_att)?;
        let (ctx, weights) = cross_attention(g, q, enc, log_marginals)?;
        let pre = g.concat_cols(&[hidden, ctx])?;
        let pre = g.dropout(pre, rate)?;
        let logits = linear(g, pre, p.out_w, p.out_b)?;
        Ok((
            DecoderState {
                hidden,
                cell,
                feed: ctx,
            },
            logits,
            weights,
        ))
    }

    pub(crate) fn log_marginals(&self, g: &mut Graph<'_>, prep: &PreparedLattice) -> Var {
        let lm = prep.marginals.log();
        let n = lm.len();
        g.constant(Tensor::matrix(1, n, lm).expect("row vector"))
    }

    /// Summed label-smoothed cross-entropy of `target` (without sentinels)
    /// under teacher forcing; the decoder also has to predict `</s>`.
    pub fn loss(
        &self,
        g: &mut Graph<'_>,
        prep: &PreparedLattice,
        target: &[usize],
        label_smoothing: f64,
    ) -> Result<Var, ModelError> {
        let enc = self.encoder.encode(g, prep)?;
        let lm = self.log_marginals(g, prep);
        let mut state = self.initial_state(g, enc)?;
        let mut logits = Vec::with_capacity(target.len() + 1);
        let mut prev = BOS;
        for &y in target {
            let (s, lo, _) = self.decode_step(g, state, prev, enc, lm)?;
            state = s;
            logits.push(lo);
            prev = y;
        }
        let (_, lo, _) = self.decode_step(g, state, prev, enc, lm)?;
        logits.push(lo);
        let all = g.concat_rows(&logits)?;
        let mut gold = target.to_vec();
        gold.push(EOS);
        Ok(g.smoothed_cross_entropy(all, &gold, label_smoothing)?)
    }

    /// Fraction of target tokens (including `</s>`) predicted correctly by
    /// argmax under teacher forcing.
    pub fn teacher_forced_accuracy(
        &self,
        prep: &PreparedLattice,
        target: &[usize],
    ) -> Result<(usize, usize), ModelError> {
        let mut g = Graph::new(&self.store, Mode::Infer, SplitRng::new(0));
        let enc = self.encoder.encode(&mut g, prep)?;
        let lm = self.log_marginals(&mut g, prep);
        let mut state = self.initial_state(&mut g, enc)?;
        let mut prev = BOS;
        let mut correct = 0;
        let gold: Vec<usize> = target.iter().copied().chain([EOS]).collect();
        for &y in &gold {
            let (s, lo, _) = self.decode_step(&mut g, state, prev, enc, lm)?;
            state = s;
            if argmax(g.value(lo).data()) == y {
                correct += 1;
            }
            prev = y;
        }
        Ok((correct, gold.len()))
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), ModelError> {
        let manifest = serde_json::to_value(Manifest {
            config: self.config.clone(),
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
        })?;
        write_checkpoint(w, &manifest, &self.store)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self, ModelError> {
        let (manifest, store) = read_checkpoint(r)?;
        let m: Manifest = serde_json::from_value(manifest)?;
        let mut model = Model::new(m.config, m.src_vocab, m.tgt_vocab, 0)?;
        model.store.load_from(&store)?;
        Ok(model)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
