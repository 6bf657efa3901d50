use thiserror::Error;

/// Errors raised while building, parsing or validating lattices.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("syntax error at line {line}, offset {offset}: {message}")]
    Syntax {
        line: usize,
        offset: usize,
        message: String,
    },
    #[error("lattice has no nodes")]
    Empty,
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("duplicate node id {0}")]
    DuplicateNodeId(u64),
    #[error("edge references unknown node {0}")]
    UnknownNode(u64),
    #[error("edge {from} -> {to} has invalid probability {p} (must lie in (0, 1])")]
    BadProbability { from: usize, to: usize, p: f64 },
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: usize, to: usize },
    #[error("graph contains a cycle through node {node}")]
    Cycle { node: usize },
    #[error(
        "lattice must have exactly one start node, found {count} nodes without incoming edges"
    )]
    MultipleSources { count: usize },
    #[error("lattice must have exactly one end node, found {count} nodes without outgoing edges")]
    MultipleSinks { count: usize },
    #[error("declared {which} node {declared} does not match the graph's {which} node {actual}")]
    EndpointMismatch {
        which: &'static str,
        declared: usize,
        actual: usize,
    },
    #[error("node {node} is not on any complete start-to-end path")]
    Unreachable { node: usize },
    #[error("transition probabilities at node {token} sum to {sum} (node id {node})")]
    Unnormalized {
        node: usize,
        token: String,
        sum: PrettyFloat,
    },
}

impl LatticeError {
    /// Coarse error class, stable across message wording changes.
    pub fn class(&self) -> &'static str {
        match self {
            LatticeError::Syntax { .. } => "syntax",
            LatticeError::Empty | LatticeError::EmptySequence => "empty",
            LatticeError::DuplicateNodeId(_) | LatticeError::UnknownNode(_) => "node-reference",
            LatticeError::BadProbability { .. } => "probability",
            LatticeError::DuplicateEdge { .. } => "duplicate-edge",
            LatticeError::Cycle { .. } => "cycle",
            LatticeError::MultipleSources { .. } | LatticeError::EndpointMismatch { .. } => {
                "source"
            }
            LatticeError::MultipleSinks { .. } => "sink",
            LatticeError::Unreachable { .. } => "unreachable",
            LatticeError::Unnormalized { .. } => "normalization",
        }
    }
}

/// A float that prints with at most 12 significant digits, so that
/// `0.4 + 0.7` shows up as `1.1` in messages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrettyFloat(pub f64);

impl std::fmt::Display for PrettyFloat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = self.0;
        if !v.is_finite() {
            return write!(f, "{v}");
        }
        let s = format!("{:.*e}", 11, v);
        let parsed: f64 = s.parse().unwrap_or(v);
        write!(f, "{parsed}")
    }
}

/// Errors from the mask engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask shape mismatch: {0}x{0} vs {1}x{1}")]
    Shape(usize, usize),
    #[error("mask kind mismatch: {0:?} vs {1:?}")]
    Kind(crate::masks::MaskKind, crate::masks::MaskKind),
    #[error("directional masking needs an even number of heads, got {0}")]
    OddHeads(usize),
    #[error("lattice has more than {limit} complete paths")]
    TooManyPaths { limit: usize },
}

/// Errors from tensor operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("tensors have at most 3 dimensions, got {0}")]
    Rank(usize),
    #[error("softmax row {row} is entirely masked")]
    FullyMaskedRow { row: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("duplicate parameter {0}")]
    DuplicateParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Errors from the encoder and translation model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("node {node} has position {position}, which exceeds max_position {max_position}")]
    PositionOverflow {
        node: usize,
        position: usize,
        max_position: usize,
    },
    #[error("cross-attention got {marginals} marginals for {rows} encoder rows")]
    MarginalLength { marginals: usize, rows: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
