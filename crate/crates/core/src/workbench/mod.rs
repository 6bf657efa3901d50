//! Synthetic data, the recurrent lattice baseline, speed benchmarks and the
//! desk-scale experiment protocol.

pub mod bench;
pub mod experiment;
pub mod recurrent;
pub mod synth;

pub use bench::{BenchConfig, BenchPhase, BenchReport, EncoderKind, MaskScaling};
pub use recurrent::{RecurrentEncoder, RecurrentInput};
pub use synth::{generate, write_corpus, CorpusFiles, GenConfig, GenStats, Language, SynthItem};
