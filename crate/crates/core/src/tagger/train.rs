//! Tagger training (SGD with momentum, decayed step size, dev-F1 early
//! stopping) and evaluation.

use log::info;
use rand::seq::SliceRandom;

use super::metrics::{micro_f1, Prf};
use super::model::{Encoded, LmInput, Tagger};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::params::{clip_grad_norm, decayed_lr, Momentum, ParamSet};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerTrainConfig {
    pub batch: usize,
    pub lr0: f64,
    pub decay: f64,
    pub momentum: f64,
    pub clip: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TaggerTrainConfig {
    fn default() -> Self {
        TaggerTrainConfig {
            batch: 10,
            lr0: 0.015,
            decay: 0.05,
            momentum: 0.9,
            clip: 5.0,
            dropout: 0.5,
            epochs: 100,
            patience: 10,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TaggerTrainReport {
    pub log: Vec<TaggerEpochLog>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// LM features for every sentence under the embedder's current masks.
/// Empty when the tagger has no LM.
pub fn lm_cache(tagger: &Tagger, data: &[Encoded]) -> Result<Vec<Tensor>> {
    match &tagger.embedder {
        None => Ok(Vec::new()),
        Some(e) => data.iter().map(|s| e.lm_feature_tensor(&s.lm_ids)).collect(),
    }
}

fn lm_input<'a>(cache: &'a [Tensor], i: usize) -> LmInput<'a> {
    cache.get(i).map_or(LmInput::Live, LmInput::Cached)
}

/// Viterbi paths for every sentence.
pub fn decode_all(tagger: &Tagger, data: &[Encoded], cache: &[Tensor]) -> Result<Vec<Vec<usize>>> {
    data.iter()
        .enumerate()
        .map(|(i, s)| tagger.decode(s, lm_input(cache, i)).map(|(p, _)| p))
        .collect()
}

/// Micro-F1 of Viterbi predictions against the gold labels in `data`.
pub fn evaluate(tagger: &Tagger, data: &[Encoded], cache: &[Tensor]) -> Result<Prf> {
    let pred = decode_all(tagger, data, cache)?;
    let names = |ids: &[usize]| -> Vec<String> { ids.iter().map(|&l| tagger.labels.name(l).to_string()).collect() };
    let gold: Vec<Vec<String>> = data.iter().map(|s| names(&s.labels)).collect();
    let pred: Vec<Vec<String>> = pred.iter().map(|p| names(p)).collect();
    micro_f1(&gold, &pred)
}

/// Momentum buffers for the tagger's own parameters and `W_cr`.
pub struct TaggerOptimizer {
    tagger: Momentum,
    embedder: Option<Momentum>,
}

impl TaggerOptimizer {
    pub fn new(tagger: &Tagger, momentum: f64) -> Self {
        TaggerOptimizer {
            tagger: Momentum::new(&tagger.params, momentum),
            embedder: tagger.embedder.as_ref().map(|e| Momentum::new(&e.params, momentum)),
        }
    }

    /// Average accumulated gradients over `n`, clip, and step.
    pub fn step(&mut self, tagger: &mut Tagger, n: usize, lr: f64, clip: f64) -> Result<f64> {
        let scale = 1.0 / n.max(1) as f64;
        let mut sets: Vec<&mut ParamSet> = vec![&mut tagger.params];
        if let Some(e) = tagger.embedder.as_mut() {
            sets.push(&mut e.params);
        }
        for s in sets.iter_mut() {
            s.scale_grads(scale);
        }
        let norm = clip_grad_norm(&mut sets, clip);
        self.tagger.step(&mut tagger.params, lr)?;
        if let (Some(m), Some(e)) = (self.embedder.as_mut(), tagger.embedder.as_mut()) {
            m.step(&mut e.params, lr)?;
        }
        Ok(norm)
    }
}

pub(crate) fn zero_grads(tagger: &mut Tagger) {
    tagger.params.zero_grad();
    if let Some(e) = tagger.embedder.as_mut() {
        e.params.zero_grad();
    }
}

pub(crate) fn accumulate(tagger: &mut Tagger, g: &Graph, grads: &crate::autograd::Gradients) {
    tagger.params.accumulate(g, grads);
    if let Some(e) = tagger.embedder.as_mut() {
        e.params.accumulate(g, grads);
    }
}

fn snapshot(tagger: &Tagger) -> (ParamSet, Option<ParamSet>) {
    (tagger.params.clone(), tagger.embedder.as_ref().map(|e| e.params.clone()))
}

fn restore(tagger: &mut Tagger, snap: (ParamSet, Option<ParamSet>)) {
    tagger.params = snap.0;
    if let (Some(e), Some(p)) = (tagger.embedder.as_mut(), snap.1) {
        e.params = p;
    }
}

/// Train until `cfg.epochs` or `cfg.patience` epochs without a dev-F1 gain;
/// returns the tagger restored to its best dev-F1 epoch.
pub fn train_tagger(
    mut tagger: Tagger,
    train: &[Encoded],
    dev: &[Encoded],
    cfg: &TaggerTrainConfig,
    mut on_epoch: impl FnMut(&TaggerEpochLog),
) -> Result<(Tagger, TaggerTrainReport)> {
    if train.is_empty() {
        return Err(Error::Empty("no training sentences".into()));
    }
    let train_cache = lm_cache(&tagger, train)?;
    let dev_cache = lm_cache(&tagger, dev)?;
    let mut opt = TaggerOptimizer::new(&tagger, cfg.momentum);
    let mut batch_rng = rng::stream(cfg.seed, "batch.tagger");
    let mut drop_rng = rng::stream(cfg.seed, "dropout.tagger");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, (ParamSet, Option<ParamSet>))> = None;

    for epoch in 0..cfg.epochs {
        let lr = decayed_lr(cfg.lr0, cfg.decay, epoch);
        order.shuffle(&mut batch_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            zero_grads(&mut tagger);
            for &i in chunk {
                let sent = &train[i];
                let masks = (cfg.dropout > 0.0).then(|| tagger.dropout_masks(sent.len(), cfg.dropout, &mut drop_rng));
                let mut g = Graph::new();
                let loss = tagger.nll(&mut g, sent, lm_input(&train_cache, i), masks.as_ref())?;
                let v = g.value(loss).item();
                if !v.is_finite() {
                    return Err(Error::Diverged(format!("tagger loss {v} at epoch {epoch}")));
                }
                total += v;
                let grads = g.backward(loss)?;
                accumulate(&mut tagger, &g, &grads);
            }
            opt.step(&mut tagger, chunk.len(), lr, cfg.clip)?;
        }
        let dev_f1 = if dev.is_empty() { 0.0 } else { evaluate(&tagger, dev, &dev_cache)?.f1 };
        let entry = TaggerEpochLog {
            epoch,
            lr,
            train_loss: total / train.len() as f64,
            dev_f1,
        };
        info!("tagger epoch {epoch}: loss {:.4}, dev F1 {:.4}", entry.train_loss, dev_f1);
        on_epoch(&entry);
        log.push(entry);
        match &best {
            Some((b, _, _)) if dev_f1 <= *b => {}
            _ => best = Some((dev_f1, epoch, snapshot(&tagger))),
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_dev_f1, best_epoch, snap) = best.ok_or_else(|| Error::Config("epochs must be > 0".into()))?;
    restore(&mut tagger, snap);
    Ok((
        tagger,
        TaggerTrainReport {
            log,
            best_epoch,
            best_dev_f1,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::vocab::Vocab;
    use crate::tagger::model::{CharVocab, LabelSet, TaggerDims};

    #[test]
    fn memorizes_a_toy_corpus() {
        let sents: Vec<(Vec<&str>, Vec<&str>)> = vec![
            (vec!["john", "runs"], vec!["S-PER", "O"]),
            (vec!["in", "paris", "now"], vec!["O", "S-LOC", "O"]),
            (vec!["mary", "ann", "sings"], vec!["B-PER", "E-PER", "O"]),
            (vec!["rome", "is", "old"], vec!["S-LOC", "O", "O"]),
        ];
        let words = Vocab::build(sents.iter().flat_map(|s| s.0.iter().copied()), 0);
        let chars = CharVocab::build(sents.iter().flat_map(|s| s.0.iter().copied()));
        let labels = LabelSet::build(sents.iter().flat_map(|s| s.1.iter().copied()));
        let dims = TaggerDims {
            char_embed: 4,
            char_hidden: 6,
            word_dim: 6,
            word_hidden: 8,
        };
        let t = Tagger::new(dims, words, chars, labels, None, 3).unwrap();
        let data: Vec<Encoded> = sents.iter().map(|(w, l)| t.encode(w, Some(l)).unwrap()).collect();
        let cfg = TaggerTrainConfig {
            batch: 2,
            lr0: 0.05,
            dropout: 0.0,
            epochs: 60,
            patience: 60,
            ..Default::default()
        };
        let (t, report) = train_tagger(t, &data, &data, &cfg, |_| {}).unwrap();
        assert_eq!(evaluate(&t, &data, &[]).unwrap().f1, 1.0);
        let best = report.log.iter().map(|e| e.dev_f1).fold(0.0, f64::max);
        assert_eq!(report.best_dev_f1, best);
    }
}
