//! Self-attentional encoding of lattice inputs.
//!
//! The crate is organized bottom-up:
//!
//! - [`lattice`]: the lattice data model, parsing, traversals, reversal,
//!   line-graph conversion and longest-path positions.
//! - [`masks`]: binary and probabilistic reachability masks, marginals, and
//!   a brute-force path-enumeration oracle.
//! - [`numerics`]: a small dense tensor engine with reverse-mode gradients.
//! - [`encoder`]: the masked multi-head Transformer encoder over lattices.
//! - [`translator`]: the lattice-to-sequence model, training and decoding.
//! - [`workbench`]: synthetic data, a recurrent lattice baseline and the
//!   speed benchmark harness.

#![allow(clippy::needless_range_loop)]

pub mod encoder;
pub mod error;
pub mod lattice;
pub mod masks;
pub mod numerics;
pub mod translator;
pub mod vocab;
pub mod workbench;

pub use error::{LatticeError, MaskError, ModelError, TensorError};
pub use lattice::{Edge, Lattice, NodeId, PositionVector};
pub use masks::{Direction, HeadStrategy, MarginalVector, MaskKind, MaskMatrix};
