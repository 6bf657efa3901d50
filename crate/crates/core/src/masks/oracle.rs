//! Exponential-time reference computations by explicit path enumeration.
//! Only meant for small lattices in tests.

use crate::error::MaskError;
use crate::lattice::{Lattice, NodeId};

/// Default guard on the number of complete paths.
pub const MAX_PATHS: usize = 1_000_000;

/// Every complete path with its probability (product of transitions).
pub fn enumerate_paths(l: &Lattice, limit: usize) -> Result<Vec<(Vec<NodeId>, f64)>, MaskError> {
    let mut out = Vec::new();
    let mut stack = vec![(vec![l.start()], 1.0)];
    while let Some((path, p)) = stack.pop() {
        let last = *path.last().expect("paths are non-empty");
        if last == l.end() {
            if out.len() == limit {
                return Err(MaskError::TooManyPaths { limit });
            }
            out.push((path, p));
            continue;
        }
        for e in l.out_edges(last) {
            let mut next = path.clone();
            next.push(e.to);
            stack.push((next, p * e.p));
        }
    }
    Ok(out)
}

/// `entry[i][j]` = (mass of complete paths containing `i` and later `j`) /
/// (mass of complete paths containing `i`); diagonal is 1.
pub fn brute_force_reach_probs(l: &Lattice) -> Result<Vec<Vec<f64>>, MaskError> {
    let n = l.len();
    let paths = enumerate_paths(l, MAX_PATHS)?;
    let mut joint = vec![vec![0.0; n]; n];
    let mut single = vec![0.0; n];
    for (path, p) in &paths {
        for (a, &i) in path.iter().enumerate() {
            single[i.0] += p;
            for &j in &path[a + 1..] {
                joint[i.0][j.0] += p;
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            joint[i][j] = if i == j { 1.0 } else { joint[i][j] / single[i] };
        }
    }
    Ok(joint)
}

/// Pairs `(i, j)` that appear together on at least one complete path.
pub fn co_occurrence(l: &Lattice) -> Result<Vec<Vec<bool>>, MaskError> {
    let n = l.len();
    let mut out = vec![vec![false; n]; n];
    for (path, _) in enumerate_paths(l, MAX_PATHS)? {
        for &i in &path {
            for &j in &path {
                out[i.0][j.0] = true;
            }
        }
    }
    Ok(out)
}
