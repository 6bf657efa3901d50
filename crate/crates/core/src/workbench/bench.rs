//! Speed measurements: words per second of the self-attentional and the
//! recurrent lattice encoder, and the growth of mask computation time.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::recurrent::{RecurrentEncoder, RecurrentInput};
use super::synth::{generate, GenConfig, SynthItem};
use crate::encoder::{EncoderConfig, EncoderStack, PreparedLattice};
use crate::error::ModelError;
use crate::lattice::{Edge, Lattice, NodeId};
use crate::masks::prob_masks;
use crate::numerics::{GradBuffer, Graph, Mode, ParamStore, SplitRng, Var};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    LatticeRecurrent,
    LatticeSelfAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPhase {
    /// Forward and backward pass over `batch` sentences at a time.
    TrainStep,
    /// Single-sentence forward pass, including mask or order preparation.
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub encoder: EncoderKind,
    pub phase: BenchPhase,
    /// Sentences per computation; 1 means unbatched.
    pub batch: usize,
    /// Mean over runs; words are source (reference) tokens.
    pub words_per_second: f64,
    pub per_run: Vec<f64>,
    /// Mean lattice nodes per reference token, sentinels excluded.
    pub lattice_density: f64,
    pub runs: usize,
    pub hardware: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskScaling {
    pub nodes: Vec<usize>,
    pub seconds: Vec<f64>,
    /// Least-squares slope of log(seconds) against log(nodes).
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub corpus: GenConfig,
    pub runs: usize,
    pub encoder: EncoderConfig,
    pub rnn_layers: usize,
    /// Sentences per batched self-attention training step. The recurrent
    /// encoder visits nodes one at a time and is always run unbatched.
    pub train_batch: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            corpus: GenConfig {
                n_sentences: 100,
                ..GenConfig::default()
            },
            runs: 3,
            encoder: EncoderConfig::default(),
            rnn_layers: 2,
            train_batch: 64,
            seed: 1,
        }
    }
}

/// A short description of the machine the numbers come from.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    format!(
        "{cpu}; {} {}; 1 worker thread",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

fn time_it(mut f: impl FnMut() -> Result<(), ModelError>) -> Result<f64, ModelError> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f64())
}

struct Setup {
    items: Vec<SynthItem>,
    vocab: Vocab,
    words: usize,
    density: f64,
}

fn setup(cfg: &BenchConfig) -> Result<Setup, ModelError> {
    let (items, stats) = generate(&cfg.corpus)?;
    let vocab = Vocab::build(
        items
            .iter()
            .flat_map(|i| i.lattice.tokens().iter().map(String::as_str)),
        1,
    );
    Ok(Setup {
        words: stats.source_tokens,
        density: stats.density,
        items,
        vocab,
    })
}

fn sum_loss(g: &mut Graph<'_>, y: Var) -> Var {
    let sq = g.mul(y, y).expect("same shape");
    g.sum(sq)
}

/// Runs both encoders in both phases, `cfg.runs` times each. Self-attention
/// training is reported batched and, when `train_batch > 1`, also unbatched.
pub fn run_speed(cfg: &BenchConfig) -> Result<Vec<BenchReport>, ModelError> {
    let s = setup(cfg)?;
    let hardware = hardware_descriptor();
    let mut rng = SplitRng::new(cfg.seed);
    let mut sa_store = ParamStore::new();
    let sa = EncoderStack::new(cfg.encoder.clone(), s.vocab.len(), &mut sa_store, &mut rng)?;
    let d = cfg.encoder.d_model;
    let mut rnn_store = ParamStore::new();
    let rnn = RecurrentEncoder::new(
        s.vocab.len(),
        d,
        d / 2,
        cfg.rnn_layers,
        &mut rnn_store,
        &mut rng,
    )?;
    let ids: Vec<Vec<usize>> = s
        .items
        .iter()
        .map(|i| s.vocab.ids(i.lattice.tokens()))
        .collect();
    let sa_in: Vec<PreparedLattice> = s
        .items
        .iter()
        .zip(&ids)
        .map(|(i, ids)| sa.prepare(&i.lattice, ids.clone()))
        .collect::<Result<_, _>>()?;
    let rnn_in: Vec<RecurrentInput> = s
        .items
        .iter()
        .zip(&ids)
        .map(|(i, ids)| RecurrentInput::new(&i.lattice, ids.clone()))
        .collect();

    let mut reports = Vec::new();
    let mut report = |encoder, phase, batch, secs: Vec<f64>| {
        let per_run: Vec<f64> = secs.iter().map(|t| s.words as f64 / t).collect();
        reports.push(BenchReport {
            encoder,
            phase,
            batch,
            words_per_second: per_run.iter().sum::<f64>() / per_run.len() as f64,
            per_run,
            lattice_density: s.density,
            runs: secs.len(),
            hardware: hardware.clone(),
        });
    };

    let runs = cfg.runs.max(1);
    let train_batch = cfg.train_batch.max(1);
    let mut batch_sizes = vec![train_batch];
    if train_batch > 1 {
        batch_sizes.push(1);
    }
    for batch in batch_sizes {
        let mut secs = Vec::with_capacity(runs);
        for r in 0..runs {
            let mut buf = GradBuffer::zeros_like(&sa_store);
            secs.push(time_it(|| {
                for (k, chunk) in sa_in.chunks(batch).enumerate() {
                    let seed = SplitRng::new(cfg.seed).split((r * 100_000 + k) as u64);
                    let mut g = Graph::new(&sa_store, Mode::Train, seed);
                    let chunk: Vec<&PreparedLattice> = chunk.iter().collect();
                    let y = sa.encode_batch(&mut g, &chunk)?;
                    let loss = sum_loss(&mut g, y);
                    g.backward_into(loss, &mut buf)?;
                }
                Ok(())
            })?);
        }
        report(
            EncoderKind::LatticeSelfAttention,
            BenchPhase::TrainStep,
            batch,
            secs,
        );
    }

    let mut secs = Vec::with_capacity(runs);
    for _ in 0..runs {
        let mut buf = GradBuffer::zeros_like(&rnn_store);
        secs.push(time_it(|| {
            for p in &rnn_in {
                let mut g = Graph::new(&rnn_store, Mode::Train, SplitRng::new(cfg.seed));
                let y = rnn.encode(&mut g, p)?;
                let loss = sum_loss(&mut g, y);
                g.backward_into(loss, &mut buf)?;
            }
            Ok(())
        })?);
    }
    report(
        EncoderKind::LatticeRecurrent,
        BenchPhase::TrainStep,
        1,
        secs,
    );

    let mut secs = Vec::with_capacity(runs);
    for _ in 0..runs {
        secs.push(time_it(|| {
            for (item, ids) in s.items.iter().zip(&ids) {
                let p = sa.prepare(&item.lattice, ids.clone())?;
                let mut g = Graph::new(&sa_store, Mode::Infer, SplitRng::new(0));
                sa.encode(&mut g, &p)?;
            }
            Ok(())
        })?);
    }
    report(
        EncoderKind::LatticeSelfAttention,
        BenchPhase::Inference,
        1,
        secs,
    );

    let mut secs = Vec::with_capacity(runs);
    for _ in 0..runs {
        secs.push(time_it(|| {
            for (item, ids) in s.items.iter().zip(&ids) {
                let p = RecurrentInput::new(&item.lattice, ids.clone());
                let mut g = Graph::new(&rnn_store, Mode::Infer, SplitRng::new(0));
                rnn.encode(&mut g, &p)?;
            }
            Ok(())
        })?);
    }
    report(
        EncoderKind::LatticeRecurrent,
        BenchPhase::Inference,
        1,
        secs,
    );
    Ok(reports)
}

/// A chain of `n` nodes (including sentinels).
pub fn chain_lattice(n: usize) -> Lattice {
    let toks: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    Lattice::chain(&toks).expect("chains are valid")
}

/// A confusion network with roughly `n` nodes: sentinels plus columns of
/// two or three alternatives with random probabilities.
pub fn confusion_lattice(n: usize, rng: &mut SplitRng) -> Lattice {
    let mut tokens = vec!["<s>".to_string()];
    let mut edges = Vec::new();
    let mut prev = vec![0usize];
    while tokens.len() + 1 < n {
        let k = (2 + rng.below(2)).min(n - 1 - tokens.len());
        let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.uniform()).collect();
        let total: f64 = raw.iter().sum();
        let col: Vec<usize> = (0..k).map(|i| tokens.len() + i).collect();
        for _ in 0..k {
            tokens.push(format!("w{}", rng.below(50)));
        }
        for &a in &prev {
            for (i, &b) in col.iter().enumerate() {
                edges.push(Edge {
                    from: NodeId(a),
                    to: NodeId(b),
                    p: raw[i] / total,
                });
            }
        }
        prev = col;
    }
    let end = tokens.len();
    tokens.push("</s>".to_string());
    for &a in &prev {
        edges.push(Edge {
            from: NodeId(a),
            to: NodeId(end),
            p: 1.0,
        });
    }
    Lattice::with_tolerance(tokens, edges, NodeId(0), NodeId(end), 1e-6)
        .expect("confusion networks are valid")
}

/// Times forward and backward probabilistic mask computation (best of
/// `reps`) on each lattice and fits the growth exponent.
pub fn mask_scaling(lattices: &[Lattice], reps: usize) -> MaskScaling {
    let mut nodes = Vec::new();
    let mut seconds = Vec::new();
    for l in lattices {
        let mut best = f64::INFINITY;
        for _ in 0..reps.max(1) {
            let t = Instant::now();
            let m = prob_masks(l);
            std::hint::black_box(&m);
            best = best.min(t.elapsed().as_secs_f64());
        }
        nodes.push(l.len());
        seconds.push(best);
    }
    let x: Vec<f64> = nodes.iter().map(|&n| n as f64).collect();
    let exponent = loglog_slope(&x, &seconds);
    MaskScaling {
        nodes,
        seconds,
        exponent,
    }
}
