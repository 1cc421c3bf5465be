//! Densely connected recurrent language models whose layers can be pruned
//! per downstream task, and a BiLSTM-CRF sequence labeler that consumes
//! their contextualized representations.

pub mod autograd;
pub mod cli;
pub mod embedder;
pub mod error;
pub mod io;
pub mod lm;
pub mod params;
pub mod pruning;
pub mod recurrent;
pub mod rng;
pub mod synth;
pub mod tagger;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
