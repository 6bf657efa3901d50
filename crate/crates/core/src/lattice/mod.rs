//! Node-labeled lattices: validated DAGs with a unique start and end node and
//! per-edge transition probabilities.
//!
//! A [`Lattice`] is immutable once built. Construction validates every
//! structural invariant (acyclicity, single source and sink, normalized
//! out-going transition probabilities, no parallel edges) and caches the
//! adjacency lists and a deterministic topological order.

mod dot;
mod json;
mod plf;
mod transform;

pub use dot::to_dot;
pub use json::{from_json, to_json, JsonEdge, JsonLattice, JsonNode};
pub use plf::{parse_plf, PlfProb};
pub use transform::{line_graph, reverse, EdgeLabeledLattice, LabeledEdge};

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use crate::error::{LatticeError, PrettyFloat};

/// Reserved token carried by the start node of generated lattices.
pub const START_TOKEN: &str = "<s>";
/// Reserved token carried by the end node of generated lattices.
pub const END_TOKEN: &str = "</s>";

/// Tolerance on out-going probability sums that [`Lattice::new`] accepts as-is.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Looser tolerance accepted by the parsers, which renormalize within it.
pub const PARSE_TOLERANCE: f64 = 1e-6;

/// Dense node index in `[0, |V|)`. Id order is not assumed to be topological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    /// Transition probability `p(to | from)`.
    pub p: f64,
}

/// Lattice input format accepted by [`parse_lattice`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Plf(PlfProb),
}

/// Parses a lattice from text. PLF input is edge-labeled and goes through
/// [`line_graph`] before it is returned.
pub fn parse_lattice(text: &str, format: Format) -> Result<Lattice, LatticeError> {
    match format {
        Format::Json => from_json(text),
        Format::Plf(prob) => Ok(line_graph(&parse_plf(text, prob)?)),
    }
}

#[derive(Debug, Clone)]
pub struct Lattice {
    tokens: Vec<String>,
    edges: Vec<Edge>,
    start: NodeId,
    end: NodeId,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    topo: Vec<NodeId>,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.edges == other.edges
            && self.start == other.start
            && self.end == other.end
    }
}

/// Result of the structural checks shared by node- and edge-labeled lattices.
pub(crate) struct DagShape {
    pub out_edges: Vec<Vec<usize>>,
    pub in_edges: Vec<Vec<usize>>,
    pub topo: Vec<NodeId>,
}

/// Validates a DAG given as `(from, to, p)` triples. Returns adjacency and a
/// topological order with ties broken by ascending id. Probability sums off
/// by more than [`NORMALIZATION_TOLERANCE`] but within `tolerance` are
/// reported through `renormalize`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn check_dag(
    n: usize,
    edges: &[(usize, usize, f64)],
    start: usize,
    end: usize,
    tolerance: f64,
    allow_parallel: bool,
    token_of: &dyn Fn(usize) -> String,
    renormalize: &mut Vec<usize>,
) -> Result<DagShape, LatticeError> {
    if n == 0 {
        return Err(LatticeError::Empty);
    }
    for &id in &[start, end] {
        if id >= n {
            return Err(LatticeError::UnknownNode(id as u64));
        }
    }
    let mut out_edges = vec![Vec::new(); n];
    let mut in_edges = vec![Vec::new(); n];
    let mut seen = std::collections::HashSet::new();
    for (idx, &(from, to, p)) in edges.iter().enumerate() {
        if from >= n {
            return Err(LatticeError::UnknownNode(from as u64));
        }
        if to >= n {
            return Err(LatticeError::UnknownNode(to as u64));
        }
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(LatticeError::BadProbability { from, to, p });
        }
        if from == to {
            return Err(LatticeError::Cycle { node: from });
        }
        if !allow_parallel && !seen.insert((from, to)) {
            return Err(LatticeError::DuplicateEdge { from, to });
        }
        out_edges[from].push(idx);
        in_edges[to].push(idx);
    }

    // Kahn's algorithm with a min-heap so ties resolve to the smallest id.
    let mut indeg: Vec<usize> = in_edges.iter().map(Vec::len).collect();
    let mut heap: BinaryHeap<Reverse<usize>> = indeg
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(Reverse(k)) = heap.pop() {
        topo.push(NodeId(k));
        for &e in &out_edges[k] {
            let j = edges[e].1;
            indeg[j] -= 1;
            if indeg[j] == 0 {
                heap.push(Reverse(j));
            }
        }
    }
    if topo.len() < n {
        let node = indeg.iter().position(|&d| d > 0).unwrap_or(0);
        return Err(LatticeError::Cycle { node });
    }

    let sources: Vec<usize> = (0..n).filter(|&i| in_edges[i].is_empty()).collect();
    let sinks: Vec<usize> = (0..n).filter(|&i| out_edges[i].is_empty()).collect();
    if sources.len() != 1 {
        return Err(LatticeError::MultipleSources {
            count: sources.len(),
        });
    }
    if sinks.len() != 1 {
        return Err(LatticeError::MultipleSinks { count: sinks.len() });
    }
    if sources[0] != start {
        return Err(LatticeError::EndpointMismatch {
            which: "start",
            declared: start,
            actual: sources[0],
        });
    }
    if sinks[0] != end {
        return Err(LatticeError::EndpointMismatch {
            which: "end",
            declared: end,
            actual: sinks[0],
        });
    }

    // With one source and one sink in a DAG every node is on a complete
    // path; the explicit sweep keeps the check independent of that argument.
    let mut from_start = vec![false; n];
    from_start[start] = true;
    for &k in &topo {
        if from_start[k.0] {
            for &e in &out_edges[k.0] {
                from_start[edges[e].1] = true;
            }
        }
    }
    let mut to_end = vec![false; n];
    to_end[end] = true;
    for &k in topo.iter().rev() {
        if out_edges[k.0].iter().any(|&e| to_end[edges[e].1]) {
            to_end[k.0] = true;
        }
    }
    if let Some(node) = (0..n).find(|&i| !(from_start[i] && to_end[i])) {
        return Err(LatticeError::Unreachable { node });
    }

    for k in 0..n {
        if k == end {
            continue;
        }
        let sum: f64 = out_edges[k].iter().map(|&e| edges[e].2).sum();
        let dev = (sum - 1.0).abs();
        if dev > tolerance {
            return Err(LatticeError::Unnormalized {
                node: k,
                token: token_of(k),
                sum: PrettyFloat(sum),
            });
        }
        if dev > NORMALIZATION_TOLERANCE {
            renormalize.push(k);
        }
    }

    Ok(DagShape {
        out_edges,
        in_edges,
        topo,
    })
}

impl Lattice {
    /// Builds a lattice, requiring out-going probabilities to sum to one
    /// within [`NORMALIZATION_TOLERANCE`].
    pub fn new(
        tokens: Vec<String>,
        edges: Vec<Edge>,
        start: NodeId,
        end: NodeId,
    ) -> Result<Self, LatticeError> {
        Self::with_tolerance(tokens, edges, start, end, NORMALIZATION_TOLERANCE)
    }

    /// Like [`Lattice::new`], but accepts probability sums within `tolerance`
    /// and renormalizes those nodes. Sums already within
    /// [`NORMALIZATION_TOLERANCE`] are left bit-for-bit untouched.
    pub fn with_tolerance(
        tokens: Vec<String>,
        mut edges: Vec<Edge>,
        start: NodeId,
        end: NodeId,
        tolerance: f64,
    ) -> Result<Self, LatticeError> {
        let triples: Vec<(usize, usize, f64)> =
            edges.iter().map(|e| (e.from.0, e.to.0, e.p)).collect();
        let mut renorm = Vec::new();
        let token_of = |k: usize| tokens.get(k).cloned().unwrap_or_default();
        let shape = check_dag(
            tokens.len(),
            &triples,
            start.0,
            end.0,
            tolerance,
            false,
            &token_of,
            &mut renorm,
        )?;
        for k in renorm {
            let sum: f64 = shape.out_edges[k].iter().map(|&e| edges[e].p).sum();
            for &e in &shape.out_edges[k] {
                edges[e].p /= sum;
            }
        }
        Ok(Lattice {
            tokens,
            edges,
            start,
            end,
            out_edges: shape.out_edges,
            in_edges: shape.in_edges,
            topo: shape.topo,
        })
    }

    /// A single-path lattice over exactly `tokens` (no sentinels added).
    pub fn chain<S: AsRef<str>>(tokens: &[S]) -> Result<Self, LatticeError> {
        if tokens.is_empty() {
            return Err(LatticeError::EmptySequence);
        }
        let n = tokens.len();
        let edges = (1..n)
            .map(|i| Edge {
                from: NodeId(i - 1),
                to: NodeId(i),
                p: 1.0,
            })
            .collect();
        Lattice::new(
            tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            edges,
            NodeId(0),
            NodeId(n - 1),
        )
    }

    /// Treats a token sequence as a lattice with a single complete path,
    /// wrapped in `<s>` / `</s>` sentinel nodes.
    pub fn from_sequence<S: AsRef<str>>(tokens: &[S]) -> Result<Self, LatticeError> {
        if tokens.is_empty() {
            return Err(LatticeError::EmptySequence);
        }
        let mut all = Vec::with_capacity(tokens.len() + 2);
        all.push(START_TOKEN.to_string());
        all.extend(tokens.iter().map(|t| t.as_ref().to_string()));
        all.push(END_TOKEN.to_string());
        Lattice::chain(&all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn start(&self) -> NodeId {
        self.start
    }

    pub fn end(&self) -> NodeId {
        self.end
    }

    pub fn token(&self, k: NodeId) -> &str {
        &self.tokens[k.0]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.tokens.len()).map(NodeId)
    }

    /// Out-going edges of `k`, in insertion order.
    pub fn out_edges(&self, k: NodeId) -> impl Iterator<Item = &Edge> + '_ {
        self.out_edges[k.0].iter().map(move |&e| &self.edges[e])
    }

    /// In-coming edges of `k`, in insertion order.
    pub fn in_edges(&self, k: NodeId) -> impl Iterator<Item = &Edge> + '_ {
        self.in_edges[k.0].iter().map(move |&e| &self.edges[e])
    }

    /// Transition probability of edge `from -> to`, if it exists.
    pub fn transition(&self, from: NodeId, to: NodeId) -> Option<f64> {
        self.out_edges(from).find(|e| e.to == to).map(|e| e.p)
    }

    /// Direct successors N⁺(k), ascending.
    pub fn neighbors_out(&self, k: NodeId) -> BTreeSet<NodeId> {
        self.out_edges(k).map(|e| e.to).collect()
    }

    /// Direct predecessors N⁻(k), ascending.
    pub fn neighbors_in(&self, k: NodeId) -> BTreeSet<NodeId> {
        self.in_edges(k).map(|e| e.from).collect()
    }

    /// All nodes reachable from `k` through one or more edges.
    pub fn successors(&self, k: NodeId) -> BTreeSet<NodeId> {
        self.closure(k, |n| self.out_edges(n).map(|e| e.to).collect())
    }

    /// All nodes from which `k` is reachable through one or more edges.
    pub fn predecessors(&self, k: NodeId) -> BTreeSet<NodeId> {
        self.closure(k, |n| self.in_edges(n).map(|e| e.from).collect())
    }

    fn closure(&self, k: NodeId, next: impl Fn(NodeId) -> Vec<NodeId>) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = next(k);
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(next(n));
            }
        }
        seen
    }

    /// Topological order with ties broken by ascending id.
    pub fn topological_order(&self) -> &[NodeId] {
        &self.topo
    }

    /// Index of every node within [`Lattice::topological_order`].
    pub fn topological_positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.len()];
        for (i, k) in self.topo.iter().enumerate() {
            pos[k.0] = i;
        }
        pos
    }

    /// Longest-path distance (in edges) from the start node to every node.
    pub fn longest_path_positions(&self) -> PositionVector {
        let mut pos = vec![0usize; self.len()];
        for &k in &self.topo {
            for e in self.out_edges(k) {
                pos[e.to.0] = pos[e.to.0].max(pos[k.0] + 1);
            }
        }
        PositionVector(pos)
    }

    /// Tokens in topological order, paired with their node ids.
    pub fn linearize(&self) -> Vec<(String, NodeId)> {
        self.topo
            .iter()
            .map(|&k| (self.tokens[k.0].clone(), k))
            .collect()
    }

    /// Relabels nodes so that old node `k` becomes `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Lattice, LatticeError> {
        let mut tokens = vec![String::new(); self.len()];
        for (old, &new) in perm.iter().enumerate() {
            tokens[new] = self.tokens[old].clone();
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                from: NodeId(perm[e.from.0]),
                to: NodeId(perm[e.to.0]),
                p: e.p,
            })
            .collect();
        Lattice::new(
            tokens,
            edges,
            NodeId(perm[self.start.0]),
            NodeId(perm[self.end.0]),
        )
    }
}

/// Per-node integer positions; see [`Lattice::longest_path_positions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionVector(pub Vec<usize>);

impl PositionVector {
    pub fn get(&self, k: NodeId) -> usize {
        self.0[k.0]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }
}
