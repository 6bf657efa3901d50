//! Reachability masks over lattices.
//!
//! Masks are additive pre-softmax attention terms indexed `[query][key]`.
//! Entries are `0` where attention is unrestricted, `log p` where it is
//! down-weighted by a reaching probability, and `-inf` where the key can
//! never co-occur with the query in the mask's direction.
//!
//! The forward probabilistic mask holds `log p(j ≻ i | i)`, the probability
//! that a complete path through query `i` continues on to key `j`. It is
//! computed by one dynamic-programming sweep over the topological order per
//! query, so `O(|V| (|V| + |E|))` overall; the backward mask runs the same
//! sweep on the reversed lattice.

use serde::{Deserialize, Serialize};

use crate::error::MaskError;
use crate::lattice::{reverse, Lattice, NodeId};

pub mod oracle;

/// Probabilities below this are flushed to zero (`-inf` in log space).
pub const FLUSH_BELOW: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
    Nondirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Binary,
    Probabilistic,
}

/// How per-direction masks are distributed over attention heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadStrategy {
    /// First half of the heads use the forward mask, second half the backward mask.
    Directional,
    /// Every head uses the elementwise maximum of both masks.
    Nondirectional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    dir: Direction,
    kind: MaskKind,
    n: usize,
    data: Vec<f64>,
}

impl MaskMatrix {
    pub fn new(dir: Direction, kind: MaskKind, n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "mask data must be n*n");
        MaskMatrix { dir, kind, n, data }
    }

    /// An all-zero (unrestricted) mask.
    pub fn zeros(n: usize) -> Self {
        MaskMatrix::new(
            Direction::Nondirectional,
            MaskKind::Binary,
            n,
            vec![0.0; n * n],
        )
    }

    pub fn dir(&self) -> Direction {
        self.dir
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, query: usize, key: usize) -> f64 {
        self.data[query * self.n + key]
    }

    pub fn row(&self, query: usize) -> &[f64] {
        &self.data[query * self.n..(query + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Whether `key` is visible from `query`.
    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.get(query, key) > f64::NEG_INFINITY
    }

    /// Tab-separated rows; `-inf` for masked entries, otherwise 17
    /// significant digits.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for q in 0..self.n {
            let row: Vec<String> = self.row(q).iter().map(|&v| format_entry(v)).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// Formats a mask entry the way the TSV dump does.
pub fn format_entry(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if v == 0.0 {
        "0".to_string()
    } else {
        format!("{:.16e}", v)
    }
}

/// Binary reachability masks. Forward: query `i` sees `j` iff `j = i` or `j`
/// is a successor of `i`. Backward: iff `j = i` or `j` is a predecessor.
pub fn binary_masks(l: &Lattice) -> (MaskMatrix, MaskMatrix) {
    let n = l.len();
    let mut fwd = vec![f64::NEG_INFINITY; n * n];
    let mut bwd = vec![f64::NEG_INFINITY; n * n];
    let order = l.topological_order();
    // reach[i] as a bitset would be leaner; rows stay dense for clarity.
    let mut reach = vec![false; n * n];
    for &k in order.iter().rev() {
        reach[k.0 * n + k.0] = true;
        for e in l.out_edges(k) {
            let (src, dst) = (k.0 * n, e.to.0 * n);
            for j in 0..n {
                if reach[dst + j] {
                    reach[src + j] = true;
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if reach[i * n + j] {
                fwd[i * n + j] = 0.0;
                bwd[j * n + i] = 0.0;
            }
        }
    }
    (
        MaskMatrix::new(Direction::Forward, MaskKind::Binary, n, fwd),
        MaskMatrix::new(Direction::Backward, MaskKind::Binary, n, bwd),
    )
}

/// Pairwise conditional reaching probabilities `q[i][j] = p(j ≻ i | i)`,
/// with `q[i][i] = 1`, row-major.
pub fn reaching_probabilities(l: &Lattice) -> Vec<f64> {
    let n = l.len();
    let order = l.topological_order();
    let topo_pos = l.topological_positions();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut q[i * n..(i + 1) * n];
        row[i] = 1.0;
        // Nodes before the query in topological order hold zero mass.
        for &k in &order[topo_pos[i]..] {
            let mass = row[k.0];
            if mass == 0.0 {
                continue;
            }
            for e in l.out_edges(k) {
                row[e.to.0] += e.p * mass;
            }
        }
        for v in row.iter_mut() {
            if *v < FLUSH_BELOW {
                *v = 0.0;
            }
        }
    }
    q
}

fn log_mask(q: Vec<f64>, n: usize, dir: Direction) -> MaskMatrix {
    let mut data: Vec<f64> = q.into_iter().map(f64::ln).collect();
    for i in 0..n {
        data[i * n + i] = 0.0;
    }
    MaskMatrix::new(dir, MaskKind::Probabilistic, n, data)
}

/// Logarithmized probabilistic masks. The backward mask comes from running
/// the same computation on [`reverse`]`(l)`.
pub fn prob_masks(l: &Lattice) -> (MaskMatrix, MaskMatrix) {
    let n = l.len();
    let fwd = log_mask(reaching_probabilities(l), n, Direction::Forward);
    let bwd = log_mask(reaching_probabilities(&reverse(l)), n, Direction::Backward);
    (fwd, bwd)
}

/// Marginal probability `p(j ≻ S | S)` of every node lying on a complete path.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVector(pub Vec<f64>);

impl MarginalVector {
    pub fn get(&self, k: NodeId) -> f64 {
        self.0[k.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn log(&self) -> Vec<f64> {
        self.0.iter().map(|p| p.ln()).collect()
    }
}

/// Node marginals by a single forward sweep. Uses the same accumulation
/// order as the start-node row of [`reaching_probabilities`], so the two
/// agree exactly.
pub fn compute_marginals(l: &Lattice) -> MarginalVector {
    let mut p = vec![0.0; l.len()];
    p[l.start().0] = 1.0;
    for &k in l.topological_order() {
        let mass = p[k.0];
        if mass == 0.0 {
            continue;
        }
        for e in l.out_edges(k) {
            p[e.to.0] += e.p * mass;
        }
    }
    for v in p.iter_mut() {
        if *v < FLUSH_BELOW {
            *v = 0.0;
        }
    }
    MarginalVector(p)
}

/// Elementwise maximum of a forward and a backward mask.
pub fn merge_nondirectional(fwd: &MaskMatrix, bwd: &MaskMatrix) -> Result<MaskMatrix, MaskError> {
    if fwd.n != bwd.n {
        return Err(MaskError::Shape(fwd.n, bwd.n));
    }
    if fwd.kind != bwd.kind {
        return Err(MaskError::Kind(fwd.kind, bwd.kind));
    }
    let data = fwd
        .data
        .iter()
        .zip(&bwd.data)
        .map(|(a, b)| a.max(*b))
        .collect();
    Ok(MaskMatrix::new(
        Direction::Nondirectional,
        fwd.kind,
        fwd.n,
        data,
    ))
}

/// One mask per attention head.
pub fn head_masks(
    fwd: &MaskMatrix,
    bwd: &MaskMatrix,
    n_heads: usize,
    strategy: HeadStrategy,
) -> Result<Vec<MaskMatrix>, MaskError> {
    match strategy {
        HeadStrategy::Directional => {
            if !n_heads.is_multiple_of(2) {
                return Err(MaskError::OddHeads(n_heads));
            }
            if fwd.n != bwd.n {
                return Err(MaskError::Shape(fwd.n, bwd.n));
            }
            Ok((0..n_heads)
                .map(|h| {
                    if h < n_heads / 2 {
                        fwd.clone()
                    } else {
                        bwd.clone()
                    }
                })
                .collect())
        }
        HeadStrategy::Nondirectional => {
            let merged = merge_nondirectional(fwd, bwd)?;
            Ok(vec![merged; n_heads])
        }
    }
}

/// Mask that only lets a node see itself and its direct neighbors, as in
/// graph attention. Used as a local-context baseline.
pub fn adjacency_mask(l: &Lattice) -> MaskMatrix {
    let n = l.len();
    let mut data = vec![f64::NEG_INFINITY; n * n];
    for i in 0..n {
        data[i * n + i] = 0.0;
    }
    for e in l.edges() {
        data[e.from.0 * n + e.to.0] = 0.0;
        data[e.to.0 * n + e.from.0] = 0.0;
    }
    MaskMatrix::new(Direction::Nondirectional, MaskKind::Binary, n, data)
}
