use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Edge, Lattice, NodeId, PARSE_TOLERANCE};
use crate::error::LatticeError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JsonNode {
    pub id: u64,
    pub token: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JsonEdge {
    pub from: u64,
    pub to: u64,
    pub p: f64,
}

/// Canonical JSON lattice document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JsonLattice {
    pub nodes: Vec<JsonNode>,
    pub edges: Vec<JsonEdge>,
    pub start: u64,
    pub end: u64,
}

impl JsonLattice {
    /// Validates the document. Node ids are reassigned densely in the order
    /// the nodes are listed.
    pub fn into_lattice(self) -> Result<Lattice, LatticeError> {
        let mut index = HashMap::with_capacity(self.nodes.len());
        let mut tokens = Vec::with_capacity(self.nodes.len());
        for node in self.nodes {
            if index.insert(node.id, tokens.len()).is_some() {
                return Err(LatticeError::DuplicateNodeId(node.id));
            }
            tokens.push(node.token);
        }
        let lookup = |id: u64| {
            index
                .get(&id)
                .map(|&i| NodeId(i))
                .ok_or(LatticeError::UnknownNode(id))
        };
        let edges = self
            .edges
            .iter()
            .map(|e| {
                Ok(Edge {
                    from: lookup(e.from)?,
                    to: lookup(e.to)?,
                    p: e.p,
                })
            })
            .collect::<Result<Vec<_>, LatticeError>>()?;
        let start = lookup(self.start)?;
        let end = lookup(self.end)?;
        Lattice::with_tolerance(tokens, edges, start, end, PARSE_TOLERANCE)
    }
}

impl From<&Lattice> for JsonLattice {
    fn from(l: &Lattice) -> Self {
        JsonLattice {
            nodes: l
                .tokens()
                .iter()
                .enumerate()
                .map(|(i, t)| JsonNode {
                    id: i as u64,
                    token: t.clone(),
                })
                .collect(),
            edges: l
                .edges()
                .iter()
                .map(|e| JsonEdge {
                    from: e.from.0 as u64,
                    to: e.to.0 as u64,
                    p: e.p,
                })
                .collect(),
            start: l.start().0 as u64,
            end: l.end().0 as u64,
        }
    }
}

/// Parses one JSON lattice document.
pub fn from_json(text: &str) -> Result<Lattice, LatticeError> {
    let doc: JsonLattice = serde_json::from_str(text).map_err(|e| LatticeError::Syntax {
        line: e.line(),
        offset: e.column(),
        message: e.to_string(),
    })?;
    doc.into_lattice()
}

/// Serializes on a single line. Floats use shortest round-trip printing, so
/// parsing the output reproduces every probability bit-for-bit.
pub fn to_json(l: &Lattice) -> String {
    serde_json::to_string(&JsonLattice::from(l)).expect("lattice serialization cannot fail")
}
