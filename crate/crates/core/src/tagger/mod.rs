//! BiLSTM-CRF sequence labeling.

pub mod bioes;
pub mod crf;
pub mod metrics;
pub mod model;
pub mod train;

pub use metrics::{micro_f1, Prf};
pub use model::{CharVocab, Encoded, LabelSet, LmInput, Tagger, TaggerDims};
pub use train::{evaluate, train_tagger, TaggerTrainConfig};
