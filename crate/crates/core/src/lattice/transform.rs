use super::{check_dag, Edge, Lattice, NodeId, END_TOKEN, NORMALIZATION_TOLERANCE, START_TOKEN};
use crate::error::LatticeError;
use crate::masks::compute_marginals;

/// Reverses all edges and swaps start and end.
///
/// Reversed transition probabilities are `p(k | j) = m(k) p(j | k) / m(j)`
/// for every original edge `k -> j`, where `m` are the node marginals. One
/// step in the reversed lattice then reproduces the backward reaching
/// probabilities, and complete paths keep their probabilities.
pub fn reverse(l: &Lattice) -> Lattice {
    let marg = compute_marginals(l);
    let edges = l
        .edges()
        .iter()
        .map(|e| Edge {
            from: e.to,
            to: e.from,
            p: marg.get(e.from) * e.p / marg.get(e.to),
        })
        .collect();
    Lattice::new(l.tokens().to_vec(), edges, l.end(), l.start())
        .expect("reversal of a valid lattice is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEdge {
    pub from: usize,
    pub to: usize,
    pub token: String,
    pub p: f64,
}

/// A lattice whose tokens sit on edges. Parallel edges are allowed as long as
/// they carry distinct alternatives; this is the form PLF text describes.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLabeledLattice {
    num_nodes: usize,
    edges: Vec<LabeledEdge>,
    start: usize,
    end: usize,
    topo: Vec<NodeId>,
}

impl EdgeLabeledLattice {
    pub fn new(
        num_nodes: usize,
        edges: Vec<LabeledEdge>,
        start: usize,
        end: usize,
    ) -> Result<Self, LatticeError> {
        Self::with_tolerance(num_nodes, edges, start, end, NORMALIZATION_TOLERANCE)
    }

    pub fn with_tolerance(
        num_nodes: usize,
        mut edges: Vec<LabeledEdge>,
        start: usize,
        end: usize,
        tolerance: f64,
    ) -> Result<Self, LatticeError> {
        let triples: Vec<_> = edges.iter().map(|e| (e.from, e.to, e.p)).collect();
        let mut renorm = Vec::new();
        let shape = check_dag(
            num_nodes,
            &triples,
            start,
            end,
            tolerance,
            true,
            &|k| format!("#{k}"),
            &mut renorm,
        )?;
        for k in renorm {
            let sum: f64 = shape.out_edges[k].iter().map(|&e| edges[e].p).sum();
            for &e in &shape.out_edges[k] {
                edges[e].p /= sum;
            }
        }
        Ok(EdgeLabeledLattice {
            num_nodes,
            edges,
            start,
            end,
            topo: shape.topo,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[LabeledEdge] {
        &self.edges
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn topological_order(&self) -> &[NodeId] {
        &self.topo
    }
}

/// Converts an edge-labeled lattice to a node-labeled one.
///
/// Node `1 + i` carries the token of edge `i`; node 0 is a fresh `<s>` and
/// the last node a fresh `</s>`. Edge-nodes `e1 -> e2` are connected when `e1`
/// ends where `e2` starts, with `e2`'s probability renormalized over the
/// out-going edges of that shared node.
pub fn line_graph(e: &EdgeLabeledLattice) -> Lattice {
    let m = e.edges.len();
    let end = m + 1;
    let mut out_sum = vec![0.0; e.num_nodes];
    let mut out_of = vec![Vec::new(); e.num_nodes];
    for (i, edge) in e.edges.iter().enumerate() {
        out_sum[edge.from] += edge.p;
        out_of[edge.from].push(i);
    }

    let mut tokens = Vec::with_capacity(m + 2);
    tokens.push(START_TOKEN.to_string());
    tokens.extend(e.edges.iter().map(|x| x.token.clone()));
    tokens.push(END_TOKEN.to_string());

    let mut edges = Vec::new();
    let link = |from: usize, via: usize, edges: &mut Vec<Edge>| {
        for &j in &out_of[via] {
            edges.push(Edge {
                from: NodeId(from),
                to: NodeId(j + 1),
                p: e.edges[j].p / out_sum[via],
            });
        }
    };
    link(0, e.start, &mut edges);
    for (i, edge) in e.edges.iter().enumerate() {
        if edge.to == e.end {
            edges.push(Edge {
                from: NodeId(i + 1),
                to: NodeId(end),
                p: 1.0,
            });
        } else {
            link(i + 1, edge.to, &mut edges);
        }
    }
    Lattice::new(tokens, edges, NodeId(0), NodeId(end))
        .expect("line graph of a valid edge-labeled lattice is valid")
}
