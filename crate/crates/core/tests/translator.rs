mod common;

use common::{branching, rng};
use latsa_core::encoder::{EncoderConfig, MaskSetting, PositionKind};
use latsa_core::numerics::{GradBuffer, Graph, LrPolicy, Mode, ParamStore, SplitRng, Tensor};
use latsa_core::translator::{
    accumulate_gradients, corpus_bleu, token_accuracy, train, Example, Model, ModelConfig, Phase,
    Prepared, TrainSchedule,
};
use latsa_core::vocab::{Vocab, BOS, EOS};
use latsa_core::{HeadStrategy, Lattice};
use rand::Rng;

const SYMBOLS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn copy_examples(n: usize, seed: u64) -> Vec<Example> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let len = r.random_range(2..=6);
            let toks: Vec<String> = (0..len)
                .map(|_| SYMBOLS[r.random_range(0..6)].to_string())
                .collect();
            Example {
                source: Lattice::from_sequence(&toks).unwrap(),
                target: toks.iter().map(|t| t.to_uppercase()).collect(),
            }
        })
        .collect()
}

fn config(dropout: f64) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            dropout,
            mask_kind: MaskSetting::Probabilistic,
            direction: HeadStrategy::Directional,
            positions: PositionKind::LongestPath,
            max_position: 32,
            ..EncoderConfig::default()
        },
        d_hidden: 32,
        d_tgt_emb: 16,
        decoder_dropout: dropout,
    }
}

fn model_for(examples: &[Example], dropout: f64, seed: u64) -> Model {
    let src = Vocab::build(
        examples
            .iter()
            .flat_map(|e| e.source.tokens().iter().map(String::as_str)),
        1,
    );
    let tgt = Vocab::build(
        examples
            .iter()
            .flat_map(|e| e.target.iter().map(String::as_str)),
        1,
    );
    Model::new(config(dropout), src, tgt, seed).unwrap()
}

fn schedule(epochs: usize) -> TrainSchedule {
    TrainSchedule {
        phase: Phase::PretrainSequential,
        lr_policy: LrPolicy::Fixed { lr: 0.01 },
        label_smoothing: 0.0,
        batch_sentences: 16,
        patience_epochs: epochs,
        max_epochs: epochs,
        seed: 3,
        ..TrainSchedule::default()
    }
}

fn store_bits(m: &Model) -> Vec<u64> {
    m.store()
        .iter()
        .flat_map(|(_, p)| {
            p.tensor
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn learns_to_copy() {
    let data = copy_examples(300, 1);
    let mut model = model_for(&data, 0.0, 2);
    let prepared = model.prepare_examples(&data).unwrap();
    let summary = train(
        &mut model,
        &prepared,
        &prepared[..60],
        &schedule(25),
        |_| {},
    )
    .unwrap();
    let (mut correct, mut total) = (0, 0);
    for p in &prepared {
        let (c, t) = model.teacher_forced_accuracy(&p.input, &p.target).unwrap();
        correct += c;
        total += t;
    }
    let acc = correct as f64 / total as f64;
    assert!(acc >= 0.99, "teacher-forced accuracy {acc}, {summary:?}");
}

#[test]
fn label_smoothing_matches_hand_computation() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, Mode::Infer, SplitRng::new(0));
    let logits = [1.0f64, 2.0, 3.0, 0.5];
    let x = g.constant(Tensor::matrix(1, 4, logits.to_vec()).unwrap());
    let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
    let logp: Vec<f64> = logits.iter().map(|v| v - lse).collect();
    for eps in [0.0, 0.1, 0.3] {
        let loss = g.smoothed_cross_entropy(x, &[2], eps).unwrap();
        let expected = -(1.0 - eps) * logp[2] - eps * logp.iter().sum::<f64>() / 4.0;
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }
}

#[test]
fn gradient_accumulation_equals_a_big_batch() {
    let data = copy_examples(32, 4);
    let model = model_for(&data, 0.2, 5);
    let prepared = model.prepare_examples(&data).unwrap();
    let items: Vec<&Prepared> = prepared.iter().take(16).collect();
    let seeds: Vec<u64> = (0..16).collect();
    let mut big = GradBuffer::zeros_like(model.store());
    accumulate_gradients(&model, &items, &seeds, 0.1, &mut big).unwrap();
    let mut halves = GradBuffer::zeros_like(model.store());
    accumulate_gradients(&model, &items[..8], &seeds[..8], 0.1, &mut halves).unwrap();
    accumulate_gradients(&model, &items[8..], &seeds[8..], 0.1, &mut halves).unwrap();
    assert!(big.max_abs_diff(&halves) < 1e-10);

    // The same holds for whole training runs.
    let run = |batch: usize, steps: usize| {
        let mut m = model_for(&data, 0.2, 5);
        let s = TrainSchedule {
            batch_sentences: batch,
            accumulation_steps: steps,
            ..schedule(1)
        };
        train(&mut m, &prepared, &prepared[..4], &s, |_| {}).unwrap();
        m
    };
    let (a, b) = (run(16, 1), run(8, 2));
    for ((_, x), (_, y)) in a.store().iter().zip(b.store().iter()) {
        assert!(x.tensor.max_abs_diff(&y.tensor) < 1e-10, "{}", x.name);
    }
}

#[test]
fn training_is_deterministic() {
    let data = copy_examples(40, 6);
    let run = || {
        let mut m = model_for(&data, 0.3, 7);
        let prepared = m.prepare_examples(&data).unwrap();
        let mut logs = Vec::new();
        train(&mut m, &prepared, &prepared[..8], &schedule(3), |l| {
            logs.push(l.clone())
        })
        .unwrap();
        let mut ckpt = Vec::new();
        m.save(&mut ckpt).unwrap();
        (logs, ckpt)
    };
    assert_eq!(run(), run());
}

#[test]
fn beam_of_one_is_greedy_decoding() {
    let data = copy_examples(60, 8);
    let mut model = model_for(&data, 0.0, 9);
    let prepared = model.prepare_examples(&data).unwrap();
    train(&mut model, &prepared, &prepared[..8], &schedule(2), |_| {}).unwrap();
    for p in prepared.iter().take(10) {
        // Independent greedy loop over the public decoder step.
        let mut g = Graph::new(model.store(), Mode::Infer, SplitRng::new(0));
        let enc = model.encoder().encode(&mut g, &p.input).unwrap();
        let lm = g.constant(Tensor::matrix(1, p.input.len(), p.input.marginals.log()).unwrap());
        let mut state = model.initial_state(&mut g, enc).unwrap();
        let (mut prev, mut out) = (BOS, Vec::new());
        loop {
            let (s, logits, _) = model.decode_step(&mut g, state, prev, enc, lm).unwrap();
            let row = g.value(logits).data();
            let y =
                (0..row.len())
                    .filter(|&i| i != BOS)
                    .fold(0, |b, i| if row[i] > row[b] { i } else { b });
            if y == EOS || out.len() >= latsa_core::translator::max_output_len(p.input.len()) {
                break;
            }
            out.push(y);
            state = s;
            prev = y;
        }
        assert_eq!(model.translate_prepared(&p.input, 1).unwrap(), out);
    }
}

#[test]
fn beam_search_output_is_bounded() {
    let data = copy_examples(20, 10);
    let model = model_for(&data, 0.0, 11);
    let prepared = model.prepare_examples(&data).unwrap();
    for p in &prepared {
        for beam in [2, 5] {
            let out = model.translate_prepared(&p.input, beam).unwrap();
            assert!(out.len() <= latsa_core::translator::max_output_len(p.input.len()));
            assert!(!out.contains(&EOS) && !out.contains(&BOS));
        }
    }
}

#[test]
fn bleu_and_accuracy_on_hand_fixture() {
    fn split(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }
    let hyp = vec![split("the cat sat on the mat")];
    let reference = vec![split("the cat sat on a mat")];
    // Precisions 5/6, 3/5, 2/4, 1/3 and no brevity penalty.
    let expected = 100.0 * (5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0f64).powf(0.25);
    assert!((corpus_bleu(&hyp, &reference) - expected).abs() < 1e-9);
    assert!((token_accuracy(&hyp, &reference) - 5.0 / 6.0).abs() < 1e-12);

    // A hypothesis half the reference length: brevity penalty exp(1 - 2).
    let short = vec![split("a b c d")];
    let long = vec![split("a b c d e f g h")];
    assert!((corpus_bleu(&short, &long) - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    assert_eq!(corpus_bleu(&[split("x y z w")], &[split("a b c d")]), 0.0);
}

#[test]
fn checkpoint_reload_is_bit_exact() {
    let data = copy_examples(30, 12);
    let mut model = model_for(&data, 0.1, 13);
    let prepared = model.prepare_examples(&data).unwrap();
    train(&mut model, &prepared, &prepared[..5], &schedule(1), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(std::fs::File::create(&path).unwrap()).unwrap();
    let back = Model::load(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(store_bits(&model), store_bits(&back));
    assert_eq!(back.config(), model.config());
    let l = branching();
    let (pa, pb) = (model.prepare(&l).unwrap(), back.prepare(&l).unwrap());
    assert_eq!(
        model.translate_prepared(&pa, 3).unwrap(),
        back.translate_prepared(&pb, 3).unwrap()
    );
    // Saving the reloaded model reproduces the same bytes.
    let (mut x, mut y) = (Vec::new(), Vec::new());
    model.save(&mut x).unwrap();
    back.save(&mut y).unwrap();
    assert_eq!(x, y);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let data = copy_examples(5, 14);
    let model = model_for(&data, 0.0, 15);
    let mut buf = Vec::new();
    model.save(&mut buf).unwrap();
    assert!(Model::load(&buf[..buf.len() / 2]).is_err());
    assert!(Model::load(&b"not a checkpoint"[..]).is_err());
}
