use serde::{Deserialize, Serialize};

use super::metrics::{corpus_bleu, token_accuracy, Scores};
use super::{Example, Model};
use crate::encoder::PreparedLattice;
use crate::error::ModelError;
use crate::numerics::{Adam, AdamConfig, GradBuffer, Graph, LrPolicy, Mode, ParamStore, SplitRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PretrainSequential,
    FinetuneLattice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub phase: Phase,
    pub adam: AdamConfig,
    pub lr_policy: LrPolicy,
    pub label_smoothing: f64,
    pub batch_sentences: usize,
    /// Number of batches whose gradients are summed before an update.
    pub accumulation_steps: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    /// Global gradient-norm clipping threshold; 0 disables clipping.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            phase: Phase::FinetuneLattice,
            adam: AdamConfig::default(),
            lr_policy: LrPolicy::WarmupDecay {
                factor: 1.0,
                d_model: 64,
                warmup_steps: 400,
            },
            label_smoothing: 0.1,
            batch_sentences: 16,
            accumulation_steps: 1,
            patience_epochs: 15,
            max_epochs: 100,
            max_grad_norm: 0.0,
            seed: 1,
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: Phase,
    pub epoch: usize,
    /// Mean loss per target token (including `</s>`).
    pub loss: f64,
    pub val_token_accuracy: f64,
    pub val_bleu: f64,
    pub lr: f64,
    pub steps: u64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_token_accuracy: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// A training example with source masks and target ids precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: PreparedLattice,
    pub target: Vec<usize>,
}

impl Model {
    pub fn prepare_examples(&self, examples: &[Example]) -> Result<Vec<Prepared>, ModelError> {
        examples
            .iter()
            .map(|e| {
                Ok(Prepared {
                    input: self.prepare(&e.source)?,
                    target: self.target_ids(&e.target),
                })
            })
            .collect()
    }

    /// Greedy (or beam) decoding of every item, scored against its target.
    pub fn evaluate(
        &self,
        data: &[Prepared],
        beam: usize,
    ) -> Result<(Scores, Vec<Vec<usize>>), ModelError> {
        let mut hyps = Vec::with_capacity(data.len());
        for d in data {
            hyps.push(self.translate_prepared(&d.input, beam)?);
        }
        let refs: Vec<Vec<usize>> = data.iter().map(|d| d.target.clone()).collect();
        let as_str = |xs: &[Vec<usize>]| -> Vec<Vec<String>> {
            xs.iter()
                .map(|s| s.iter().map(|&i| i.to_string()).collect())
                .collect()
        };
        let (h, r) = (as_str(&hyps), as_str(&refs));
        Ok((
            Scores {
                token_accuracy: token_accuracy(&h, &r),
                corpus_bleu: corpus_bleu(&h, &r),
            },
            hyps,
        ))
    }
}

/// Adds the gradients of the summed losses of `batch` into `buf` and returns
/// the summed loss. `seeds[i]` drives the dropout of item `i`.
pub fn accumulate_gradients(
    model: &Model,
    batch: &[&Prepared],
    seeds: &[u64],
    label_smoothing: f64,
    buf: &mut GradBuffer,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (item, &seed) in batch.iter().zip(seeds) {
        let mut g = Graph::new(model.store(), Mode::Train, SplitRng::new(seed));
        let loss = model.loss(&mut g, &item.input, &item.target, label_smoothing)?;
        total += g.value(loss).item();
        g.backward_into(loss, buf)?;
    }
    Ok(total)
}

/// Trains with Adam, evaluates greedy token accuracy on `valid` after every
/// epoch, keeps the best parameters, and stops after `patience_epochs`
/// epochs without improvement. `on_epoch` receives each log line.
pub fn train(
    model: &mut Model,
    train_set: &[Prepared],
    valid: &[Prepared],
    schedule: &TrainSchedule,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainSummary, ModelError> {
    if train_set.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if schedule.batch_sentences == 0 || schedule.accumulation_steps == 0 || schedule.max_epochs == 0
    {
        return Err(ModelError::Config(
            "batch size, accumulation steps and max epochs must be positive".into(),
        ));
    }
    let mut rng = SplitRng::new(schedule.seed);
    let mut adam = Adam::new(model.store(), schedule.adam);
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=schedule.max_epochs {
        epochs_run = epoch;
        rng.shuffle(&mut order);
        let mut buf = GradBuffer::zeros_like(model.store());
        let mut pending = 0usize;
        let mut batches_in_buf = 0usize;
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        let mut lr = 0.0;
        let batches: Vec<&[usize]> = order.chunks(schedule.batch_sentences).collect();
        let n_batches = batches.len();
        for (bi, chunk) in batches.into_iter().enumerate() {
            let items: Vec<&Prepared> = chunk.iter().map(|&i| &train_set[i]).collect();
            let seeds: Vec<u64> = items.iter().map(|_| rng.next_u64()).collect();
            let loss =
                accumulate_gradients(model, &items, &seeds, schedule.label_smoothing, &mut buf)?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    step: adam.steps() as usize,
                    loss,
                });
            }
            loss_sum += loss;
            tokens += items.iter().map(|p| p.target.len() + 1).sum::<usize>();
            pending += items.len();
            batches_in_buf += 1;
            if batches_in_buf == schedule.accumulation_steps || bi + 1 == n_batches {
                buf.scale(1.0 / pending as f64);
                if schedule.max_grad_norm > 0.0 {
                    let norm = buf.global_norm();
                    if norm > schedule.max_grad_norm {
                        buf.scale(schedule.max_grad_norm / norm);
                    }
                }
                lr = schedule.lr_policy.rate(adam.steps() + 1);
                adam.step(model.store_mut(), &buf, lr);
                buf = GradBuffer::zeros_like(model.store());
                pending = 0;
                batches_in_buf = 0;
            }
        }
        let (scores, _) = if valid.is_empty() {
            (
                Scores {
                    token_accuracy: 0.0,
                    corpus_bleu: 0.0,
                },
                Vec::new(),
            )
        } else {
            model.evaluate(valid, 1)?
        };
        let improved = best
            .as_ref()
            .is_none_or(|(_, acc, _)| scores.token_accuracy > *acc);
        if improved {
            best = Some((epoch, scores.token_accuracy, model.store().clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        on_epoch(&EpochLog {
            phase: schedule.phase,
            epoch,
            loss: loss_sum / tokens as f64,
            val_token_accuracy: scores.token_accuracy,
            val_bleu: scores.corpus_bleu,
            lr,
            steps: adam.steps(),
            improved,
        });
        if since_best >= schedule.patience_epochs {
            break;
        }
    }
    let (best_epoch, best_acc, params) = best.expect("at least one epoch ran");
    model.store_mut().load_from(&params)?;
    Ok(TrainSummary {
        best_epoch,
        best_val_token_accuracy: best_acc,
        epochs_run,
        stopped_early: epochs_run < schedule.max_epochs,
    })
}
