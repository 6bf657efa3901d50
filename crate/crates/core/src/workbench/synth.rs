//! Synthetic noisy-lattice translation task.
//!
//! A fixed "language" (drawn from `language_seed`) defines a bigram source
//! model over `vocab_size` symbols and a one-to-one symbol mapping to the
//! target side. A source sentence is sampled from the bigram model; its
//! target is the mapped sentence in reverse order. Each source token is
//! turned into a confusion set of 2 to `confusion_width` distinct
//! alternatives (a single one when the width is 1), and the alternatives of
//! consecutive positions are fully connected, so the lattice is a confusion
//! network. Alternative probabilities are Dirichlet samples whose
//! concentration for the true token is `1 + 10·noise_margin`, so the true
//! token is the most probable alternative more often as the margin grows
//! but not always. The 1-best path takes the most probable alternative of
//! every position; the oracle path is the true sentence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::lattice::{to_json, Edge, Lattice, NodeId, END_TOKEN, START_TOKEN};
use crate::numerics::SplitRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_sentences: usize,
    pub confusion_width: usize,
    pub noise_margin: f64,
    pub language_seed: u64,
    pub vocab_size: usize,
    /// Allowed successors per source symbol in the bigram model.
    pub successors: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 1,
            n_sentences: 1000,
            confusion_width: 3,
            noise_margin: 0.1,
            language_seed: 7,
            vocab_size: 60,
            successors: 6,
            min_len: 3,
            max_len: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.confusion_width == 0 || self.confusion_width > self.vocab_size {
            return bad("confusion_width must be in 1..=vocab_size");
        }
        if !(0.0..=10.0).contains(&self.noise_margin) {
            return bad("noise_margin must be in [0, 10]");
        }
        if self.successors == 0 || self.successors > self.vocab_size {
            return bad("successors must be in 1..=vocab_size");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        Ok(())
    }
}

pub fn source_token(i: usize) -> String {
    format!("s{i}")
}

pub fn target_token(i: usize) -> String {
    format!("t{i}")
}

/// The bigram source model and the symbol mapping.
#[derive(Debug, Clone)]
pub struct Language {
    /// `succ[a]` = (successor symbol, probability) pairs.
    succ: Vec<Vec<(usize, f64)>>,
    mapping: Vec<usize>,
}

fn sample_categorical(rng: &mut SplitRng, items: &[(usize, f64)]) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for &(x, p) in items {
        acc += p;
        if u < acc {
            return x;
        }
    }
    items.last().expect("non-empty").0
}

fn dirichlet(rng: &mut SplitRng, alpha: &[f64]) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .expect("positive shape")
                .sample(rng.rng())
        })
        .collect();
    let s: f64 = draws.iter().sum();
    draws.iter().map(|d| d / s).collect()
}

fn distinct(rng: &mut SplitRng, n: usize, k: usize, exclude: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let x = rng.below(n);
        if x != exclude && !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

impl Language {
    pub fn new(cfg: &GenConfig) -> Self {
        let mut rng = SplitRng::new(cfg.language_seed);
        let v = cfg.vocab_size;
        let succ = (0..v)
            .map(|_| {
                let next = distinct(&mut rng, v, cfg.successors, usize::MAX);
                let w = dirichlet(&mut rng, &vec![1.0; cfg.successors]);
                next.into_iter().zip(w).collect()
            })
            .collect();
        let mut mapping: Vec<usize> = (0..v).collect();
        rng.shuffle(&mut mapping);
        Language { succ, mapping }
    }

    pub fn sample_sentence(
        &self,
        rng: &mut SplitRng,
        min_len: usize,
        max_len: usize,
    ) -> Vec<usize> {
        let len = min_len + rng.below(max_len - min_len + 1);
        let mut s = vec![rng.below(self.succ.len())];
        while s.len() < len {
            let prev = *s.last().expect("non-empty");
            s.push(sample_categorical(rng, &self.succ[prev]));
        }
        s
    }

    pub fn translate(&self, source: &[usize]) -> Vec<usize> {
        source.iter().rev().map(|&x| self.mapping[x]).collect()
    }
}

/// One generated item.
#[derive(Debug, Clone)]
pub struct SynthItem {
    pub lattice: Lattice,
    pub one_best: Vec<String>,
    pub oracle: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub sentences: usize,
    pub source_tokens: usize,
    pub lattice_nodes: usize,
    /// Fraction of positions where the 1-best token differs from the oracle.
    pub one_best_error_rate: f64,
    /// Mean lattice nodes (without sentinels) per source token.
    pub density: f64,
}

/// Builds the confusion-network lattice for `source`.
fn corrupt(cfg: &GenConfig, rng: &mut SplitRng, source: &[usize]) -> (Lattice, Vec<String>) {
    let lo = cfg.confusion_width.min(2);
    let mut tokens = vec![START_TOKEN.to_string()];
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::with_capacity(source.len());
    let mut one_best = Vec::with_capacity(source.len());
    for &t in source {
        let k = lo + rng.below(cfg.confusion_width - lo + 1);
        let mut alts = vec![t];
        alts.extend(distinct(rng, cfg.vocab_size, k - 1, t));
        let mut alpha = vec![1.0; k];
        alpha[0] += 10.0 * cfg.noise_margin;
        let p = if k == 1 {
            vec![1.0]
        } else {
            dirichlet(rng, &alpha)
        };
        let best = (0..k).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        one_best.push(source_token(alts[best]));
        let mut order: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut order);
        let mut col = Vec::with_capacity(k);
        for i in order {
            col.push((tokens.len(), p[i]));
            tokens.push(source_token(alts[i]));
        }
        columns.push(col);
    }
    let end = tokens.len();
    tokens.push(END_TOKEN.to_string());
    let mut edges = Vec::new();
    let mut prev = vec![(0usize, 1.0)];
    for col in &columns {
        for &(a, _) in &prev {
            for &(b, p) in col {
                edges.push(Edge {
                    from: NodeId(a),
                    to: NodeId(b),
                    p,
                });
            }
        }
        prev = col.clone();
    }
    for &(a, _) in &prev {
        edges.push(Edge {
            from: NodeId(a),
            to: NodeId(end),
            p: 1.0,
        });
    }
    let lattice = Lattice::new(tokens, edges, NodeId(0), NodeId(end))
        .expect("confusion networks are valid lattices");
    (lattice, one_best)
}

/// Deterministic in `cfg`.
pub fn generate(cfg: &GenConfig) -> Result<(Vec<SynthItem>, GenStats), ModelError> {
    cfg.validate()?;
    let lang = Language::new(cfg);
    let mut rng = SplitRng::new(cfg.seed).split(1);
    let mut items = Vec::with_capacity(cfg.n_sentences);
    let (mut errors, mut toks, mut nodes) = (0usize, 0usize, 0usize);
    for _ in 0..cfg.n_sentences {
        let src = lang.sample_sentence(&mut rng, cfg.min_len, cfg.max_len);
        let (lattice, one_best) = corrupt(cfg, &mut rng, &src);
        let oracle: Vec<String> = src.iter().map(|&x| source_token(x)).collect();
        errors += oracle.iter().zip(&one_best).filter(|(a, b)| a != b).count();
        toks += src.len();
        nodes += lattice.len() - 2;
        let target = lang.translate(&src).into_iter().map(target_token).collect();
        items.push(SynthItem {
            lattice,
            one_best,
            oracle,
            target,
        });
    }
    let stats = GenStats {
        sentences: cfg.n_sentences,
        source_tokens: toks,
        lattice_nodes: nodes,
        one_best_error_rate: if toks == 0 {
            0.0
        } else {
            errors as f64 / toks as f64
        },
        density: if toks == 0 {
            0.0
        } else {
            nodes as f64 / toks as f64
        },
    };
    Ok((items, stats))
}

/// Paths of the four corpus files written by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusFiles {
    pub lattices: PathBuf,
    pub one_best: PathBuf,
    pub oracle: PathBuf,
    pub target: PathBuf,
}

impl CorpusFiles {
    pub fn with_prefix(prefix: &Path) -> Self {
        let p = |ext: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        CorpusFiles {
            lattices: p(".lat.jsonl"),
            one_best: p(".1best.txt"),
            oracle: p(".oracle.txt"),
            target: p(".tgt.txt"),
        }
    }
}

pub fn write_corpus(items: &[SynthItem], files: &CorpusFiles) -> Result<(), ModelError> {
    let (mut lat, mut best, mut orc, mut tgt) =
        (String::new(), String::new(), String::new(), String::new());
    for it in items {
        lat.push_str(&to_json(&it.lattice));
        lat.push('\n');
        let _ = writeln!(best, "{}", it.one_best.join(" "));
        let _ = writeln!(orc, "{}", it.oracle.join(" "));
        let _ = writeln!(tgt, "{}", it.target.join(" "));
    }
    fs::write(&files.lattices, lat)?;
    fs::write(&files.one_best, best)?;
    fs::write(&files.oracle, orc)?;
    fs::write(&files.target, tgt)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_one_gives_chains() {
        let cfg = GenConfig {
            confusion_width: 1,
            n_sentences: 20,
            ..GenConfig::default()
        };
        let (items, stats) = generate(&cfg).unwrap();
        for it in &items {
            assert_eq!(it.lattice.edges().len(), it.lattice.len() - 1);
            assert_eq!(it.one_best, it.oracle);
        }
        assert_eq!(stats.one_best_error_rate, 0.0);
    }

    #[test]
    fn target_is_mapped_reversal() {
        let cfg = GenConfig::default();
        let lang = Language::new(&cfg);
        let t = lang.translate(&[1, 2, 3]);
        assert_eq!(t[0], lang.mapping[3]);
        assert_eq!(t[2], lang.mapping[1]);
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = GenConfig {
            n_sentences: 30,
            ..GenConfig::default()
        };
        let (a, _) = generate(&cfg).unwrap();
        let (b, _) = generate(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(to_json(&x.lattice), to_json(&y.lattice));
        }
    }
}
