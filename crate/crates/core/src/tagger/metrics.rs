//! Entity-level micro-averaged precision, recall and F1.

use std::collections::HashSet;

use super::bioes::{chunks, Chunk};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            correct,
            predicted,
            gold,
        }
    }
}

/// Exact span and type matching summed over all sentences.
pub fn micro_f1<S: AsRef<str>, T: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<T>]) -> Result<Prf> {
    if gold.len() != pred.len() {
        return Err(Error::dim(
            "micro_f1",
            format!("{} gold sentences vs {} predicted", gold.len(), pred.len()),
        ));
    }
    let (mut correct, mut n_pred, mut n_gold) = (0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::dim(
                "micro_f1",
                format!("sentence {i}: {} gold labels vs {} predicted", g.len(), p.len()),
            ));
        }
        let gs: HashSet<Chunk> = chunks(g).into_iter().collect();
        let ps = chunks(p);
        n_gold += gs.len();
        n_pred += ps.len();
        correct += ps.iter().filter(|c| gs.contains(c)).count();
    }
    Ok(Prf::from_counts(correct, n_pred, n_gold))
}
