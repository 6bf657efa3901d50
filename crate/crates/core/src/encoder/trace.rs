use std::collections::BTreeMap;

use crate::numerics::Tensor;

/// Attention weights recorded per (layer, head); rows are queries.
#[derive(Debug, Clone, Default)]
pub struct AttentionTrace {
    weights: BTreeMap<(usize, usize), Tensor>,
}

impl AttentionTrace {
    pub(crate) fn record(&mut self, layer: usize, head: usize, w: Tensor) {
        self.weights.insert((layer, head), w);
    }

    pub fn weights(&self, layer: usize, head: usize) -> &Tensor {
        &self.weights[&(layer, head)]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Tensor)> {
        self.weights.iter().map(|(&(l, h), t)| (l, h, t))
    }

    /// One block per layer/head, introduced by `# layer L head H`, then one
    /// tab-separated row per query.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (l, h, t) in self.iter() {
            out.push_str(&format!("# layer {l} head {h}\n"));
            for r in 0..t.rows() {
                let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:.17e}")).collect();
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
        }
        out
    }
}
