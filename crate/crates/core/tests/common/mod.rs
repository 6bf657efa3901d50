//! Shared generators and reference computations for the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use latsa_core::lattice::{from_json, EdgeLabeledLattice, LabeledEdge};
use latsa_core::masks::oracle::{enumerate_paths, MAX_PATHS};
use latsa_core::{Edge, Lattice, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// The seven-node branching lattice used for the golden mask values:
/// `<s> -> a (.4) | b (.6)`, `a -> e`, `b -> c (.8) | d (.2)`, `c -> e`,
/// `d -> </s>`, `e -> </s>`.
pub fn branching() -> Lattice {
    from_json(&std::fs::read_to_string(fixture("branching.json")).unwrap()).unwrap()
}

fn normalized(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// A random lattice with `n` nodes (`n >= 2`) and ids in topological order
/// shuffled by a random permutation. Every node lies on a start-to-end path.
pub fn random_lattice(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Lattice {
    assert!(n >= 2);
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 1..n {
        let i = rng.random_range(0..j);
        succ[i].push(j);
    }
    for (i, s) in succ.iter_mut().enumerate().take(n - 1) {
        if s.is_empty() {
            s.push(rng.random_range(i + 1..n));
        }
        for j in i + 1..n {
            if !s.contains(&j) && rng.random_bool(density) {
                s.push(j);
            }
        }
        s.sort_unstable();
    }
    let mut tokens: Vec<String> = (0..n)
        .map(|_| format!("w{}", rng.random_range(0..4)))
        .collect();
    tokens[0] = "<s>".into();
    tokens[n - 1] = "</s>".into();
    let mut edges = Vec::new();
    for (i, s) in succ.iter().enumerate() {
        for (j, p) in s.iter().zip(normalized(rng, s.len())) {
            edges.push(Edge {
                from: NodeId(i),
                to: NodeId(*j),
                p,
            });
        }
    }
    let ordered = Lattice::with_tolerance(tokens, edges, NodeId(0), NodeId(n - 1), 1e-9).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    ordered.permute(&perm).unwrap()
}

/// A random edge-labeled lattice over `nodes` states with at most
/// `max_edges` edges.
pub fn random_edge_labeled(
    rng: &mut ChaCha8Rng,
    nodes: usize,
    max_edges: usize,
) -> EdgeLabeledLattice {
    loop {
        let mut outs: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        for i in 0..nodes - 1 {
            outs[i].push(i + 1);
            for j in i + 1..nodes {
                if rng.random_bool(0.3) {
                    outs[i].push(j);
                }
            }
        }
        let total: usize = outs.iter().map(Vec::len).sum();
        if total > max_edges {
            continue;
        }
        let mut edges = Vec::new();
        for (i, o) in outs.iter().enumerate() {
            let ps = normalized(rng, o.len());
            for (&j, p) in o.iter().zip(ps) {
                edges.push(LabeledEdge {
                    from: i,
                    to: j,
                    token: format!("t{}", rng.random_range(0..4)),
                    p,
                });
            }
        }
        return EdgeLabeledLattice::with_tolerance(nodes, edges, 0, nodes - 1, 1e-9).unwrap();
    }
}

/// Complete-path token sequences with their summed probabilities, skipping
/// the sentinels of node-labeled lattices.
pub fn node_path_multiset(l: &Lattice) -> BTreeMap<Vec<String>, f64> {
    let mut out = BTreeMap::new();
    for (path, p) in enumerate_paths(l, MAX_PATHS).unwrap() {
        let toks: Vec<String> = path[1..path.len() - 1]
            .iter()
            .map(|&k| l.token(k).to_string())
            .collect();
        *out.entry(toks).or_insert(0.0) += p;
    }
    out
}

pub fn edge_path_multiset(e: &EdgeLabeledLattice) -> BTreeMap<Vec<String>, f64> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<(usize, Vec<String>, f64)> = vec![(e.start(), Vec::new(), 1.0)];
    while let Some((node, toks, p)) = stack.pop() {
        if node == e.end() {
            *out.entry(toks).or_insert(0.0) += p;
            continue;
        }
        for edge in e.edges().iter().filter(|x| x.from == node) {
            let mut t = toks.clone();
            t.push(edge.token.clone());
            stack.push((edge.to, t, p * edge.p));
        }
    }
    out
}

/// Brute-force forward and backward reaching probabilities from explicit
/// path enumeration: `fwd[i][j]` is the share of the mass of paths through
/// `i` that later visit `j`; `bwd[i][j]` the share that visited `j` before.
pub fn brute_force_both(l: &Lattice) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = l.len();
    let mut after = vec![vec![0.0; n]; n];
    let mut single = vec![0.0; n];
    for (path, p) in enumerate_paths(l, MAX_PATHS).unwrap() {
        for (a, &i) in path.iter().enumerate() {
            single[i.0] += p;
            for &j in &path[a + 1..] {
                after[i.0][j.0] += p;
            }
        }
    }
    let mut fwd = vec![vec![0.0; n]; n];
    let mut bwd = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                fwd[i][j] = 1.0;
                bwd[i][j] = 1.0;
            } else {
                fwd[i][j] = after[i][j] / single[i];
                bwd[i][j] = after[j][i] / single[i];
            }
        }
    }
    (fwd, bwd)
}

/// Splits node `v` into two copies carrying `share` and `1 - share` of every
/// incoming transition; the copy is appended as the last node id. The set
/// of token paths and their probabilities is unchanged.
pub fn duplicate_node(l: &Lattice, v: NodeId, share: f64) -> Lattice {
    let copy = NodeId(l.len());
    let mut tokens = l.tokens().to_vec();
    tokens.push(l.token(v).to_string());
    let mut edges = Vec::new();
    for e in l.edges() {
        if e.to == v {
            edges.push(Edge {
                p: e.p * share,
                ..*e
            });
            edges.push(Edge {
                to: copy,
                p: e.p * (1.0 - share),
                ..*e
            });
        } else {
            edges.push(*e);
        }
        if e.from == v {
            edges.push(Edge { from: copy, ..*e });
        }
    }
    Lattice::with_tolerance(tokens, edges, l.start(), l.end(), 1e-9).unwrap()
}
