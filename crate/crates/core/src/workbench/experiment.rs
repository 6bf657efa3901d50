//! The desk-scale experiment: a sequential model pretrained on clean source
//! transcripts, lattice models finetuned from it with different mask and
//! position settings, and a lattice model trained from scratch. All are
//! scored on lattice, 1-best and oracle inputs of a held-out test set.
//!
//! Chains look the same to every mask and position setting (probabilistic
//! and binary masks coincide, topological and longest-path positions
//! coincide), so one pretrained model per seed serves all finetuned variants.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::synth::{generate, GenConfig, GenStats, SynthItem};
use crate::encoder::{EncoderConfig, MaskSetting, PositionKind};
use crate::error::ModelError;
use crate::lattice::Lattice;
use crate::numerics::{AdamConfig, LrPolicy};
use crate::translator::{
    train, EpochLog, Example, Model, ModelConfig, Phase, Prepared, TrainSchedule,
};
use crate::vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: GenConfig,
    pub train_sentences: usize,
    pub valid_sentences: usize,
    pub test_sentences: usize,
    /// One full run (pretraining and all variants) per seed.
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub pretrain: TrainSchedule,
    /// Used for every lattice training, including the one from scratch.
    pub finetune: TrainSchedule,
    pub beam: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig {
            encoder: EncoderConfig {
                d_model: 32,
                n_heads: 4,
                n_layers: 2,
                d_ff: 64,
                dropout: 0.1,
                max_position: 32,
                ..EncoderConfig::default()
            },
            d_hidden: 32,
            d_tgt_emb: 32,
            decoder_dropout: 0.3,
        };
        let schedule = |phase, epochs| TrainSchedule {
            phase,
            adam: AdamConfig::default(),
            lr_policy: LrPolicy::WarmupDecay {
                factor: 2.0,
                d_model: 32,
                warmup_steps: 200,
            },
            label_smoothing: 0.1,
            batch_sentences: 16,
            accumulation_steps: 1,
            patience_epochs: 5,
            max_epochs: epochs,
            max_grad_norm: 5.0,
            seed: 1,
        };
        ExperimentConfig {
            corpus: GenConfig::default(),
            train_sentences: 2000,
            valid_sentences: 200,
            test_sentences: 200,
            seeds: vec![1, 2, 3],
            model,
            pretrain: schedule(Phase::PretrainSequential, 20),
            finetune: schedule(Phase::FinetuneLattice, 25),
            beam: 1,
        }
    }
}

/// Token accuracy (percent) on the three input views of the test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScores {
    pub lattice: f64,
    pub one_best: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub mask: MaskSetting,
    pub positions: PositionKind,
    pub pretrained: bool,
    /// Best validation token accuracy (percent, lattice inputs).
    pub valid_accuracy: f64,
    pub best_epoch: usize,
    pub test: InputScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// The pretrained model; its lattice score is reported for completeness.
    pub sequential: InputScores,
    pub variants: Vec<VariantResult>,
    pub seconds: f64,
}

impl SeedResult {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub train_stats: GenStats,
    pub test_stats: GenStats,
    pub seeds: Vec<SeedResult>,
    pub seconds: f64,
}

pub const PROBABILISTIC: &str = "lattice_probabilistic";
pub const BINARY: &str = "lattice_binary";
pub const TOPOLOGICAL: &str = "lattice_topological";
pub const SCRATCH: &str = "lattice_scratch";

impl ExperimentReport {
    /// Median over seeds of `f` applied to each seed result.
    pub fn median(&self, f: impl Fn(&SeedResult) -> f64) -> f64 {
        let mut xs: Vec<f64> = self.seeds.iter().map(f).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            xs[n / 2]
        } else {
            (xs[n / 2 - 1] + xs[n / 2]) / 2.0
        }
    }

    /// Median test score of a variant on one input view.
    pub fn median_test(&self, name: &str, view: impl Fn(&InputScores) -> f64) -> f64 {
        self.median(|s| s.variant(name).map_or(f64::NAN, |v| view(&v.test)))
    }

    pub fn median_valid(&self, name: &str) -> f64 {
        self.median(|s| s.variant(name).map_or(f64::NAN, |v| v.valid_accuracy))
    }
}

/// Held-out data in the three input views, ready for a given model.
struct Views {
    lattice: Vec<Prepared>,
    one_best: Vec<Prepared>,
    oracle: Vec<Prepared>,
}

fn chain_examples(
    items: &[SynthItem],
    pick: impl Fn(&SynthItem) -> &[String],
) -> Result<Vec<Example>, ModelError> {
    items
        .iter()
        .map(|i| {
            Ok(Example {
                source: Lattice::from_sequence(pick(i))?,
                target: i.target.clone(),
            })
        })
        .collect()
}

fn lattice_examples(items: &[SynthItem]) -> Vec<Example> {
    items
        .iter()
        .map(|i| Example {
            source: i.lattice.clone(),
            target: i.target.clone(),
        })
        .collect()
}

struct Data {
    train_lattice: Vec<Example>,
    train_oracle: Vec<Example>,
    valid_lattice: Vec<Example>,
    valid_oracle: Vec<Example>,
    test_lattice: Vec<Example>,
    test_one_best: Vec<Example>,
    test_oracle: Vec<Example>,
}

impl Data {
    fn views(&self, model: &Model) -> Result<Views, ModelError> {
        Ok(Views {
            lattice: model.prepare_examples(&self.test_lattice)?,
            one_best: model.prepare_examples(&self.test_one_best)?,
            oracle: model.prepare_examples(&self.test_oracle)?,
        })
    }
}

fn score(model: &Model, views: &Views, beam: usize) -> Result<InputScores, ModelError> {
    let acc = |d: &[Prepared]| -> Result<f64, ModelError> {
        Ok(100.0 * model.evaluate(d, beam)?.0.token_accuracy)
    };
    Ok(InputScores {
        lattice: acc(&views.lattice)?,
        one_best: acc(&views.one_best)?,
        oracle: acc(&views.oracle)?,
    })
}

fn with_encoder(base: &EncoderConfig, mask: MaskSetting, positions: PositionKind) -> EncoderConfig {
    EncoderConfig {
        mask_kind: mask,
        positions,
        ..base.clone()
    }
}

/// Runs the whole protocol. `log` receives every epoch line, tagged with
/// the seed and the variant name (`"sequential"` for pretraining).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mut log: impl FnMut(u64, &str, &EpochLog),
) -> Result<ExperimentReport, ModelError> {
    let start = Instant::now();
    let split = |seed_offset: u64, n: usize| GenConfig {
        seed: cfg.corpus.seed * 1000 + seed_offset,
        n_sentences: n,
        ..cfg.corpus.clone()
    };
    let (train_items, train_stats) = generate(&split(1, cfg.train_sentences))?;
    let (valid_items, _) = generate(&split(2, cfg.valid_sentences))?;
    let (test_items, test_stats) = generate(&split(3, cfg.test_sentences))?;
    let data = Data {
        train_lattice: lattice_examples(&train_items),
        train_oracle: chain_examples(&train_items, |i| &i.oracle)?,
        valid_lattice: lattice_examples(&valid_items),
        valid_oracle: chain_examples(&valid_items, |i| &i.oracle)?,
        test_lattice: lattice_examples(&test_items),
        test_one_best: chain_examples(&test_items, |i| &i.one_best)?,
        test_oracle: chain_examples(&test_items, |i| &i.oracle)?,
    };
    let src_vocab = Vocab::build(
        train_items.iter().flat_map(|i| {
            i.lattice
                .tokens()
                .iter()
                .chain(&i.oracle)
                .map(String::as_str)
        }),
        2,
    );
    let tgt_vocab = Vocab::build(
        train_items
            .iter()
            .flat_map(|i| i.target.iter().map(String::as_str)),
        2,
    );

    let base = &cfg.model.encoder;
    let variants = [
        (
            PROBABILISTIC,
            MaskSetting::Probabilistic,
            PositionKind::LongestPath,
            true,
        ),
        (BINARY, MaskSetting::Binary, PositionKind::LongestPath, true),
        (
            TOPOLOGICAL,
            MaskSetting::Probabilistic,
            PositionKind::Topological,
            true,
        ),
        (
            SCRATCH,
            MaskSetting::Probabilistic,
            PositionKind::LongestPath,
            false,
        ),
    ];

    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let seed_start = Instant::now();
        let mut model_cfg = cfg.model.clone();
        model_cfg.encoder =
            with_encoder(base, MaskSetting::Probabilistic, PositionKind::LongestPath);
        let mut pretrained = Model::new(
            model_cfg.clone(),
            src_vocab.clone(),
            tgt_vocab.clone(),
            seed,
        )?;
        let schedule = TrainSchedule {
            seed,
            ..cfg.pretrain.clone()
        };
        let tr = pretrained.prepare_examples(&data.train_oracle)?;
        let va = pretrained.prepare_examples(&data.valid_oracle)?;
        train(&mut pretrained, &tr, &va, &schedule, |e| {
            log(seed, "sequential", e)
        })?;
        let sequential = score(&pretrained, &data.views(&pretrained)?, cfg.beam)?;
        let checkpoint = pretrained.store().clone();

        let mut results = Vec::with_capacity(variants.len());
        for &(name, mask, positions, from_pretrained) in &variants {
            let mut model = Model::new(
                model_cfg.clone(),
                src_vocab.clone(),
                tgt_vocab.clone(),
                seed,
            )?;
            if from_pretrained {
                model.store_mut().load_from(&checkpoint)?;
            }
            model.set_encoder_config(with_encoder(base, mask, positions))?;
            let schedule = TrainSchedule {
                seed,
                ..cfg.finetune.clone()
            };
            let tr = model.prepare_examples(&data.train_lattice)?;
            let va = model.prepare_examples(&data.valid_lattice)?;
            let summary = train(&mut model, &tr, &va, &schedule, |e| log(seed, name, e))?;
            let test = score(&model, &data.views(&model)?, cfg.beam)?;
            results.push(VariantResult {
                name: name.to_string(),
                mask,
                positions,
                pretrained: from_pretrained,
                valid_accuracy: 100.0 * summary.best_val_token_accuracy,
                best_epoch: summary.best_epoch,
                test,
            });
        }
        seeds.push(SeedResult {
            seed,
            sequential,
            variants: results,
            seconds: seed_start.elapsed().as_secs_f64(),
        });
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        train_stats,
        test_stats,
        seeds,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        let mk = |seed, acc| SeedResult {
            seed,
            sequential: InputScores {
                lattice: acc,
                one_best: acc,
                oracle: acc,
            },
            variants: Vec::new(),
            seconds: 0.0,
        };
        let (_, train_stats) = generate(&GenConfig {
            n_sentences: 1,
            ..GenConfig::default()
        })
        .unwrap();
        let mut r = ExperimentReport {
            config: ExperimentConfig::default(),
            train_stats,
            test_stats: train_stats,
            seeds: vec![mk(1, 3.0), mk(2, 1.0), mk(3, 2.0)],
            seconds: 0.0,
        };
        assert_eq!(r.median(|s| s.sequential.oracle), 2.0);
        r.seeds.pop();
        assert_eq!(r.median(|s| s.sequential.oracle), 2.0);
    }
}
