mod common;

use common::{branching, random_lattice, rng};
use latsa_core::encoder::{EncoderConfig, EncoderStack, MaskSetting};
use latsa_core::numerics::gradcheck::{check_gradients, CoordCheck};
use latsa_core::numerics::{Graph, Mode, ParamStore, SplitRng, Tensor, Var};
use latsa_core::translator::{Model, ModelConfig};
use latsa_core::vocab::Vocab;
use latsa_core::workbench::{RecurrentEncoder, RecurrentInput};
use latsa_core::{HeadStrategy, TensorError};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn assert_close(checks: &[CoordCheck]) {
    assert!(!checks.is_empty());
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .unwrap();
    assert!(
        worst.rel_error < TOL,
        "{}[{}]: analytic {} numeric {} (rel {:e})",
        worst.param,
        worst.index,
        worst.analytic,
        worst.numeric,
        worst.rel_error
    );
}

/// Reduces `y` to a scalar with fixed pseudo-random weights so that no
/// gradient vanishes by symmetry (plain sums of softmax rows are constant).
fn project(g: &mut Graph<'_>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = g.value(y).shape().to_vec();
    let mut r = SplitRng::new(seed);
    let w: Vec<f64> = (0..g.value(y).len())
        .map(|_| r.uniform() * 2.0 - 1.0)
        .collect();
    let w = g.constant(Tensor::new(shape, w)?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

#[test]
fn tensor_ops_match_finite_differences() {
    let mut r = SplitRng::new(3);
    let mut store = ParamStore::new();
    let a = store.add_normal("a", 4, 5, 0.7, &mut r).unwrap();
    let b = store.add_normal("b", 5, 3, 0.7, &mut r).unwrap();
    let c = store.add_normal("c", 4, 3, 0.7, &mut r).unwrap();
    let row = store.add_normal("row", 1, 3, 0.7, &mut r).unwrap();
    let gain = store.add_normal("gain", 1, 6, 0.7, &mut r).unwrap();
    let bias = store.add_normal("bias", 1, 6, 0.7, &mut r).unwrap();
    let table = store.add_normal("table", 7, 6, 0.7, &mut r).unwrap();
    let mask = Tensor::from_rows(&[
        vec![0.0, -0.5, f64::NEG_INFINITY, -1.2],
        vec![-0.3, 0.0, -0.1, f64::NEG_INFINITY],
        vec![f64::NEG_INFINITY, -2.0, 0.0, -0.7],
        vec![-0.2, -0.4, -0.6, 0.0],
    ])
    .unwrap();

    let loss = |s: &ParamStore| -> Result<(f64, Option<_>), TensorError> {
        let mut g = Graph::new(s, Mode::Train, SplitRng::new(9));
        let (pa, pb, pc) = (g.param(a), g.param(b), g.param(c));
        let ab = g.matmul(pa, pb)?;
        let abc = g.mul(ab, pc)?;
        let pr = g.param(row);
        let x = g.add_row(abc, pr)?;
        let x = g.add(x, pc)?;
        let t = g.tanh(x);
        let sg = g.sigmoid(x);
        let rl = g.relu(x);
        let cat = g.concat_cols(&[t, sg])?;
        let sc = g.scale(cat, 0.8);
        let ln = {
            let (pg, pbias) = (g.param(gain), g.param(bias));
            g.layer_norm(sc, pg, pbias)?
        };
        let sims = g.matmul_nt(ln, ln)?;
        let m = g.constant(mask.clone());
        let att = g.masked_softmax_rows(sims, m)?;
        let soft = g.softmax_rows(rl)?;
        let mixed = g.matmul(att, soft)?;
        let pt = g.param(table);
        let gathered = g.gather_rows(pt, &[2, 0, 2, 6])?;
        let left = g.slice_cols(gathered, 1, 4)?;
        let top = g.slice_rows(ln, 1, 3)?;
        let top = g.slice_cols(top, 2, 5)?;
        let stacked = g.concat_rows(&[mixed, left, top])?;
        let dropped = g.dropout(stacked, 0.3)?;
        let mean = g.mean_rows(dropped)?;
        let logits = g.slice_rows(stacked, 0, 4)?;
        let xent = g.smoothed_cross_entropy(logits, &[0, 2, 1, 1], 0.1)?;
        let pm = project(&mut g, mean, 1)?;
        let pd = project(&mut g, dropped, 2)?;
        let s1 = g.add(pm, pd)?;
        let total = g.add(s1, xent)?;
        Ok((g.value(total).item(), Some(g.backward(total)?)))
    };
    let checks = check_gradients(&mut store, 12, H, 4, loss).unwrap();
    assert_close(&checks);
}

fn tiny_config(mask_kind: MaskSetting, direction: HeadStrategy) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 12,
            dropout: 0.2,
            mask_kind,
            direction,
            max_position: 16,
            ..EncoderConfig::default()
        },
        d_hidden: 6,
        d_tgt_emb: 5,
        decoder_dropout: 0.2,
    }
}

fn model_loss_checks(mask_kind: MaskSetting, direction: HeadStrategy) {
    let l = branching();
    let src = Vocab::build(l.tokens().iter().map(String::as_str), 1);
    let tgt = Vocab::build("p q r".split(' '), 1);
    let model = Model::new(tiny_config(mask_kind, direction), src, tgt, 17).unwrap();
    let prep = model.prepare(&l).unwrap();
    let target = model.target_ids(&["q", "p", "r"]);
    let mut store = model.store().clone();
    let checks = check_gradients(&mut store, 4, H, 5, |s| {
        // Dropout is on; a fixed graph seed keeps the masks identical across
        // evaluations.
        let mut g = Graph::new(s, Mode::Train, SplitRng::new(21));
        let loss = model.loss(&mut g, &prep, &target, 0.1).unwrap();
        Ok((g.value(loss).item(), Some(g.backward(loss)?)))
    })
    .unwrap();
    assert_close(&checks);
}

#[test]
fn full_model_loss_probabilistic_directional() {
    model_loss_checks(MaskSetting::Probabilistic, HeadStrategy::Directional);
}

#[test]
fn full_model_loss_binary_nondirectional() {
    model_loss_checks(MaskSetting::Binary, HeadStrategy::Nondirectional);
}

#[test]
fn encoder_over_random_lattices() {
    let mut r = rng(8);
    for n in [3, 7, 11] {
        let l = random_lattice(&mut r, n, 0.3);
        let mut store = ParamStore::new();
        let config = tiny_config(MaskSetting::Probabilistic, HeadStrategy::Directional).encoder;
        let stack = EncoderStack::new(config, 8, &mut store, &mut SplitRng::new(n as u64)).unwrap();
        let ids: Vec<usize> = (0..n).map(|i| i % 8).collect();
        let prep = stack.prepare(&l, ids).unwrap();
        let checks = check_gradients(&mut store, 4, H, 6, |s| {
            let mut g = Graph::new(s, Mode::Train, SplitRng::new(2));
            let y = stack.encode(&mut g, &prep).unwrap();
            let loss = project(&mut g, y, 3)?;
            Ok((g.value(loss).item(), Some(g.backward(loss)?)))
        })
        .unwrap();
        assert_close(&checks);
    }
}

#[test]
fn recurrent_lattice_encoder() {
    let l = random_lattice(&mut rng(2), 6, 0.4);
    let mut store = ParamStore::new();
    let enc = RecurrentEncoder::new(5, 4, 3, 2, &mut store, &mut SplitRng::new(1)).unwrap();
    let input = RecurrentInput::new(&l, (0..6).map(|i| i % 5).collect());
    let checks = check_gradients(&mut store, 6, H, 7, |s| {
        let mut g = Graph::new(s, Mode::Infer, SplitRng::new(0));
        let y = enc.encode(&mut g, &input).unwrap();
        let loss = project(&mut g, y, 4)?;
        Ok((g.value(loss).item(), Some(g.backward(loss)?)))
    })
    .unwrap();
    assert_close(&checks);
}
