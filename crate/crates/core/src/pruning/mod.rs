//! Task-guided LM layer selection and cost accounting.

pub mod flops;
pub mod pattern;
pub mod prune;
pub mod regularizer;

pub use flops::{estimate_flops, FlopsReport, ModelShape};
pub use pattern::{chi_square_uniform, run_selection, selection_pattern, RetentionStats, Selection};
pub use prune::{prune, PruneConfig, PruneReport};
pub use regularizer::{penalty, penalty_grad, RegKind, RegularizerSpec};
