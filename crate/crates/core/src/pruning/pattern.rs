//! Which layers survive across repeated pruning runs.

use std::fmt::Write as _;
use std::thread;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::prune::{prune, PruneConfig, PruneReport};
use crate::error::{Error, Result};
use crate::tagger::model::{Encoded, Tagger};

/// Kept/dropped flags of both stacks from one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub seed: u64,
    pub keep_fwd: Vec<bool>,
    pub keep_bwd: Vec<bool>,
}

impl Selection {
    pub fn of(seed: u64, r: &PruneReport) -> Self {
        Selection {
            seed,
            keep_fwd: r.keep_fwd.clone(),
            keep_bwd: r.keep_bwd.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetentionStats {
    pub runs: usize,
    pub fwd_counts: Vec<usize>,
    pub bwd_counts: Vec<usize>,
}

impl RetentionStats {
    pub fn fwd_freq(&self) -> Vec<f64> {
        self.fwd_counts.iter().map(|&c| c as f64 / self.runs as f64).collect()
    }

    pub fn bwd_freq(&self) -> Vec<f64> {
        self.bwd_counts.iter().map(|&c| c as f64 / self.runs as f64).collect()
    }

    /// How often exactly the layers in `layers` (and no others) survived in
    /// one stack, counted over runs. `fwd` picks the stack.
    pub fn exact_subset_rate(selections: &[Selection], fwd: bool, layers: &[usize]) -> f64 {
        if selections.is_empty() {
            return 0.0;
        }
        let hits = selections
            .iter()
            .filter(|s| {
                let keep = if fwd { &s.keep_fwd } else { &s.keep_bwd };
                keep.iter().enumerate().all(|(i, &k)| k == layers.contains(&i))
            })
            .count();
        hits as f64 / selections.len() as f64
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("stack,layer,kept,runs,frequency\n");
        for (name, counts) in [("fwd", &self.fwd_counts), ("bwd", &self.bwd_counts)] {
            for (i, &c) in counts.iter().enumerate() {
                let _ = writeln!(out, "{name},{i},{c},{},{:.4}", self.runs, c as f64 / self.runs as f64);
            }
        }
        out
    }
}

/// Per-layer retention counts over a set of runs.
pub fn selection_pattern(selections: &[Selection]) -> Result<RetentionStats> {
    let first = selections
        .first()
        .ok_or_else(|| Error::Empty("no pruning runs to summarize".into()))?;
    let (lf, lb) = (first.keep_fwd.len(), first.keep_bwd.len());
    let mut fwd_counts = vec![0; lf];
    let mut bwd_counts = vec![0; lb];
    for s in selections {
        if s.keep_fwd.len() != lf || s.keep_bwd.len() != lb {
            return Err(Error::dim("selection_pattern", "runs disagree on stack depth"));
        }
        for (c, &k) in fwd_counts.iter_mut().zip(&s.keep_fwd) {
            *c += k as usize;
        }
        for (c, &k) in bwd_counts.iter_mut().zip(&s.keep_bwd) {
            *c += k as usize;
        }
    }
    Ok(RetentionStats {
        runs: selections.len(),
        fwd_counts,
        bwd_counts,
    })
}

/// Pearson chi-square test that retention counts are equal across layers.
/// Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_uniform(counts: &[usize]) -> Result<(f64, usize, f64)> {
    if counts.len() < 2 {
        return Err(Error::Contract("chi-square needs at least two layers".into()));
    }
    let total: usize = counts.iter().sum();
    let dof = counts.len() - 1;
    if total == 0 {
        return Ok((0.0, dof, 1.0));
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Contract(e.to_string()))?;
    Ok((stat, dof, 1.0 - dist.cdf(stat)))
}

/// Run `prune` once per seed on independent copies of `tagger`, using up to
/// `threads` workers. The seed replaces `cfg.train.seed`.
pub fn run_selection(
    tagger: &Tagger,
    train: &[Encoded],
    dev: &[Encoded],
    cfg: &PruneConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<(Selection, PruneReport)>> {
    if seeds.len() < 2 {
        return Err(Error::Config("a selection pattern needs at least two runs".into()));
    }
    let workers = threads.max(1).min(seeds.len());
    let chunk = seeds.len().div_ceil(workers);
    let results: Vec<Result<Vec<(Selection, PruneReport)>>> = thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&seed| {
                            let mut c = cfg.clone();
                            c.train.seed = seed;
                            let (_, report) = prune(tagger.clone(), train, dev, &c)?;
                            Ok((Selection::of(seed, &report), report))
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Contract("pruning worker panicked".into()))))
            .collect()
    });
    let mut out = Vec::with_capacity(seeds.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
