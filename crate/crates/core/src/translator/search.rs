use super::{argmax, DecoderState, Model};
use crate::encoder::PreparedLattice;
use crate::error::ModelError;
use crate::numerics::{softmax_in_place, Graph, Mode, SplitRng};
use crate::vocab::{BOS, EOS};

/// Output length cap for a lattice of `nodes` nodes; `</s>` is forced after it.
pub fn max_output_len(nodes: usize) -> usize {
    2 * nodes + 8
}

struct Hyp {
    tokens: Vec<usize>,
    logp: f64,
    state: DecoderState,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p).expect("logits are finite");
    p.iter().map(|x| x.ln()).collect()
}

impl Model {
    /// Beam search ranked by log-probability divided by the number of
    /// emitted tokens (counting `</s>`). `beam = 1` is greedy decoding.
    /// `<s>` is never emitted.
    /// Returns target ids without sentinels.
    pub fn translate_prepared(
        &self,
        prep: &PreparedLattice,
        beam: usize,
    ) -> Result<Vec<usize>, ModelError> {
        let beam = beam.max(1);
        let max_len = max_output_len(prep.len());
        let mut g = Graph::new(self.store(), Mode::Infer, SplitRng::new(0));
        let enc = self.encoder().encode(&mut g, prep)?;
        let lm = self.log_marginals(&mut g, prep);
        let state = self.initial_state(&mut g, enc)?;

        if beam == 1 {
            let mut out = Vec::new();
            let (mut state, mut prev) = (state, BOS);
            while out.len() < max_len {
                let (s, logits, _) = self.decode_step(&mut g, state, prev, enc, lm)?;
                let mut row = g.value(logits).data().to_vec();
                row[BOS] = f64::NEG_INFINITY;
                let y = argmax(&row);
                if y == EOS {
                    break;
                }
                out.push(y);
                state = s;
                prev = y;
            }
            return Ok(out);
        }

        let mut live = vec![Hyp {
            tokens: Vec::new(),
            logp: 0.0,
            state,
        }];
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        let norm = |toks: &[usize], logp: f64| logp / (toks.len() + 1) as f64;
        for step in 0..=max_len {
            let mut cands: Vec<(usize, usize, f64, DecoderState)> = Vec::new();
            for (hi, h) in live.iter().enumerate() {
                let prev = h.tokens.last().copied().unwrap_or(BOS);
                let (s, logits, _) = self.decode_step(&mut g, h.state, prev, enc, lm)?;
                let lp = log_softmax(g.value(logits).data());
                if step == max_len {
                    cands.push((hi, EOS, h.logp + lp[EOS], s));
                    continue;
                }
                for (y, &v) in lp.iter().enumerate().filter(|(y, _)| *y != BOS) {
                    cands.push((hi, y, h.logp + v, s));
                }
            }
            // Stable sort keeps lower (hypothesis, token) indices first on ties.
            cands.sort_by(|a, b| b.2.total_cmp(&a.2));
            let mut next = Vec::with_capacity(beam);
            for (hi, y, logp, s) in cands {
                if next.len() == beam {
                    break;
                }
                if y == EOS {
                    finished.push((live[hi].tokens.clone(), logp));
                } else {
                    let mut tokens = live[hi].tokens.clone();
                    tokens.push(y);
                    next.push(Hyp {
                        tokens,
                        logp,
                        state: s,
                    });
                }
            }
            live = next;
            if live.is_empty() || finished.len() >= beam {
                break;
            }
        }
        let best = finished
            .iter()
            .max_by(|a, b| norm(&a.0, a.1).total_cmp(&norm(&b.0, b.1)))
            .map(|(t, _)| t.clone())
            .unwrap_or_default();
        Ok(best)
    }
}
