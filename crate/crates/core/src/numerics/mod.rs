//! A small dense tensor engine with reverse-mode gradients, in double
//! precision, plus the neural building blocks the encoder and decoder use.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod nn;
mod optim;
mod params;
mod rng;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use graph::{softmax_in_place, Graph, Mode, Var, LN_EPS};
pub use nn::{feed_forward, linear, FeedForward, LayerNormParams, LstmParams};
pub use optim::{Adam, AdamConfig, LrPolicy};
pub use params::{GradBuffer, ParamId, ParamStore, Parameter};
pub use rng::SplitRng;
pub use tensor::Tensor;
