//! Bidirectional recurrent lattice encoder, used as a speed baseline.
//!
//! Nodes are visited in topological order (forward) and reverse topological
//! order (backward). A node with several predecessors starts from the
//! weighted average of their hidden and cell states, with weights
//! `m(k) p(k -> j) / m(j)`, the probability that a path through `j` came
//! from `k`. In the backward direction this weight reduces to the forward
//! transition probability `p(j -> k)`. Nodes are inherently processed one
//! after another.

use crate::error::ModelError;
use crate::lattice::Lattice;
use crate::masks::compute_marginals;
use crate::numerics::{Graph, LstmParams, ParamId, ParamStore, SplitRng, Tensor, Var};

#[derive(Debug, Clone)]
pub struct RecurrentEncoder {
    emb: ParamId,
    /// `[forward, backward]` cells per layer.
    layers: Vec<[LstmParams; 2]>,
    d_rnn: usize,
}

/// Visiting order and predecessor weights for both directions.
#[derive(Debug, Clone)]
pub struct RecurrentInput {
    pub ids: Vec<usize>,
    order: Vec<usize>,
    /// `preds[dir][j]` = (predecessor in that direction, weight).
    preds: [Vec<Vec<(usize, f64)>>; 2],
}

impl RecurrentInput {
    pub fn new(l: &Lattice, ids: Vec<usize>) -> Self {
        let n = l.len();
        let m = compute_marginals(l);
        let mut fwd = vec![Vec::new(); n];
        let mut bwd = vec![Vec::new(); n];
        for e in l.edges() {
            fwd[e.to.0].push((e.from.0, m.get(e.from) * e.p / m.get(e.to)));
            bwd[e.from.0].push((e.to.0, e.p));
        }
        RecurrentInput {
            ids,
            order: l.topological_order().iter().map(|k| k.0).collect(),
            preds: [fwd, bwd],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl RecurrentEncoder {
    pub fn new(
        vocab_size: usize,
        d_emb: usize,
        d_rnn: usize,
        n_layers: usize,
        store: &mut ParamStore,
        rng: &mut SplitRng,
    ) -> Result<Self, ModelError> {
        let emb = store.add_normal("rnn.emb", vocab_size, d_emb, (d_emb as f64).powf(-0.5), rng)?;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let input = if l == 0 { d_emb } else { 2 * d_rnn };
            layers.push([
                LstmParams::new(store, &format!("rnn.l{l}.fwd"), input, d_rnn, rng)?,
                LstmParams::new(store, &format!("rnn.l{l}.bwd"), input, d_rnn, rng)?,
            ]);
        }
        Ok(RecurrentEncoder { emb, layers, d_rnn })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.d_rnn
    }

    fn combine(
        g: &mut Graph<'_>,
        states: &[Option<Var>],
        preds: &[(usize, f64)],
    ) -> Result<Var, ModelError> {
        if let [(k, _)] = preds {
            return Ok(states[*k].expect("predecessor visited"));
        }
        let mut acc: Option<Var> = None;
        for &(k, w) in preds {
            let s = g.scale(states[k].expect("predecessor visited"), w);
            acc = Some(match acc {
                None => s,
                Some(a) => g.add(a, s)?,
            });
        }
        Ok(acc.expect("at least one predecessor"))
    }

    fn direction(
        &self,
        g: &mut Graph<'_>,
        cell: &LstmParams,
        rows: &[Var],
        input: &RecurrentInput,
        dir: usize,
    ) -> Result<Vec<Var>, ModelError> {
        let n = input.len();
        let mut hs: Vec<Option<Var>> = vec![None; n];
        let mut cs: Vec<Option<Var>> = vec![None; n];
        let zero = g.constant(Tensor::zeros(&[1, self.d_rnn]));
        let order: Box<dyn Iterator<Item = &usize>> = if dir == 0 {
            Box::new(input.order.iter())
        } else {
            Box::new(input.order.iter().rev())
        };
        for &j in order {
            let preds = &input.preds[dir][j];
            let (h0, c0) = if preds.is_empty() {
                (zero, zero)
            } else {
                (Self::combine(g, &hs, preds)?, Self::combine(g, &cs, preds)?)
            };
            let (h, c) = cell.step(g, rows[j], h0, c0)?;
            hs[j] = Some(h);
            cs[j] = Some(c);
        }
        Ok(hs
            .into_iter()
            .map(|h| h.expect("all nodes visited"))
            .collect())
    }

    /// `|V| × 2·d_rnn` node encodings, rows in node-id order.
    pub fn encode(&self, g: &mut Graph<'_>, input: &RecurrentInput) -> Result<Var, ModelError> {
        let emb = g.param(self.emb);
        let mut rows: Vec<Var> = Vec::with_capacity(input.len());
        for &id in &input.ids {
            rows.push(g.gather_rows(emb, &[id])?);
        }
        let mut out = None;
        for cells in &self.layers {
            let f = self.direction(g, &cells[0], &rows, input, 0)?;
            let b = self.direction(g, &cells[1], &rows, input, 1)?;
            rows = f
                .into_iter()
                .zip(b)
                .map(|(f, b)| g.concat_cols(&[f, b]))
                .collect::<Result<_, _>>()?;
            out = Some(g.concat_rows(&rows)?);
        }
        out.ok_or_else(|| ModelError::Config("recurrent encoder needs at least one layer".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Mode;

    #[test]
    fn output_shape() {
        let mut store = ParamStore::new();
        let enc = RecurrentEncoder::new(5, 4, 3, 2, &mut store, &mut SplitRng::new(0)).unwrap();
        let l = Lattice::from_sequence(&["a", "b"]).unwrap();
        let input = RecurrentInput::new(&l, vec![1, 3, 4, 2]);
        let mut g = Graph::new(&store, Mode::Infer, SplitRng::new(0));
        let y = enc.encode(&mut g, &input).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 6]);
    }
}
