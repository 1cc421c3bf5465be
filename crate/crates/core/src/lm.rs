//! Word-level language models over a dense stack.
//!
//! `h_t` from the stack goes through a ReLU projection and a full softmax
//! over the vocabulary. A backward model is the same network run over the
//! reversed token stream.

use std::fmt;

use log::{debug, info};
use rand::seq::SliceRandom;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{clip_grad_norm, glorot, Adam, ParamId, ParamSet};
use crate::recurrent::{layerwise_dropout_masks, DenseStack, LayerMask, StackMode, StackState};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "forward" | "fwd" => Some(Direction::Forward),
            "backward" | "bwd" => Some(Direction::Backward),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub proj_dim: usize,
}

/// ReLU projection followed by the output softmax layer.
#[derive(Clone, Debug)]
pub struct LmHead {
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub proj_dim: usize,
}

#[derive(Clone, Debug)]
pub struct LmModel {
    pub direction: Direction,
    pub vocab_size: usize,
    pub params: ParamSet,
    pub embedding: ParamId,
    pub stack: DenseStack,
    pub head: LmHead,
}

impl LmModel {
    pub fn new(dims: LmDims, direction: Direction, seed: u64) -> Self {
        let mut r = rng::stream(seed, &format!("init.lm.{direction}"));
        let mut params = ParamSet::new();
        let embedding = params.add(
            "embed",
            crate::params::uniform(dims.vocab_size, dims.embed_dim, 0.1, &mut r),
        );
        let stack = DenseStack::new(
            &mut params,
            "stack",
            dims.embed_dim,
            dims.hidden_dim,
            dims.layers,
            &mut r,
        );
        let d = stack.output_dim();
        let head = LmHead {
            proj_w: params.add("head.proj_w", glorot(d, dims.proj_dim, &mut r)),
            proj_b: params.add("head.proj_b", Tensor::zeros(1, dims.proj_dim)),
            out_w: params.add("head.out_w", glorot(dims.proj_dim, dims.vocab_size, &mut r)),
            out_b: params.add("head.out_b", Tensor::zeros(1, dims.vocab_size)),
            proj_dim: dims.proj_dim,
        };
        LmModel {
            direction,
            vocab_size: dims.vocab_size,
            params,
            embedding,
            stack,
            head,
        }
    }

    pub fn dims(&self) -> LmDims {
        LmDims {
            vocab_size: self.vocab_size,
            embed_dim: self.stack.embed_dim,
            hidden_dim: self.stack.hidden_dim,
            layers: self.stack.num_layers(),
            proj_dim: self.head.proj_dim,
        }
    }

    /// Token order as this model consumes it.
    pub fn orient(&self, tokens: &[usize]) -> Vec<usize> {
        let mut t = tokens.to_vec();
        if self.direction == Direction::Backward {
            t.reverse();
        }
        t
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.vocab_size) {
            Some(&id) => Err(Error::OutOfVocab {
                id,
                size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Run the stack over time-major token ids (`steps[t][b]`).
    pub fn run_stack(
        &self,
        g: &mut Graph,
        steps: &[Vec<usize>],
        state: &StackState,
        mode: StackMode<'_>,
    ) -> Result<crate::recurrent::StackOutput> {
        self.run_stack_with(&self.params, g, steps, state, mode)
    }

    /// As [`LmModel::run_stack`] but reading weights from `params`, which must
    /// have this model's layout.
    pub fn run_stack_with(
        &self,
        params: &ParamSet,
        g: &mut Graph,
        steps: &[Vec<usize>],
        state: &StackState,
        mode: StackMode<'_>,
    ) -> Result<crate::recurrent::StackOutput> {
        let table = params.bind(g, self.embedding);
        let mut inputs = Vec::with_capacity(steps.len());
        for ids in steps {
            self.check_ids(ids)?;
            inputs.push(g.gather(table, ids)?);
        }
        self.stack.forward(g, params, &inputs, state, mode)
    }

    /// Logits for stacked `h_t` rows.
    pub fn head_logits(&self, g: &mut Graph, h: Var) -> Result<Var> {
        self.head_logits_with(&self.params, g, h)
    }

    pub fn head_logits_with(&self, params: &ParamSet, g: &mut Graph, h: Var) -> Result<Var> {
        let pw = params.bind(g, self.head.proj_w);
        let pb = params.bind(g, self.head.proj_b);
        let ow = params.bind(g, self.head.out_w);
        let ob = params.bind(g, self.head.out_b);
        let p = g.matmul(h, pw)?;
        let p = g.add_row(p, pb)?;
        let p = g.relu(p);
        let o = g.matmul(p, ow)?;
        g.add_row(o, ob)
    }

    /// Mean NLL per token over one window. Returns the loss and the state
    /// to carry into the next window.
    pub fn window_loss(
        &self,
        g: &mut Graph,
        window: &Window,
        state: &StackState,
        mode: StackMode<'_>,
    ) -> Result<(Var, StackState)> {
        self.window_loss_with(&self.params, g, window, state, mode)
    }

    pub fn window_loss_with(
        &self,
        params: &ParamSet,
        g: &mut Graph,
        window: &Window,
        state: &StackState,
        mode: StackMode<'_>,
    ) -> Result<(Var, StackState)> {
        let out = self.run_stack_with(params, g, &window.inputs, state, mode)?;
        let h = g.concat_rows(&out.outputs)?;
        let logits = self.head_logits_with(params, g, h)?;
        let targets: Vec<usize> = window.targets.iter().flatten().copied().collect();
        self.check_ids(&targets)?;
        let loss = g.softmax_xent(logits, &targets)?;
        Ok((loss, out.state))
    }

    /// Physically remove the layers with `keep[l] == false`. The projection
    /// head drops the rows that read deleted slices of `h_t`.
    pub fn delete_layers(&self, keep: &[bool]) -> Result<LmModel> {
        let mut params = ParamSet::new();
        params.trainable = self.params.trainable;
        let embedding = params.add("embed", self.params.get(self.embedding).clone());
        let stack = self.stack.delete_layers(&self.params, keep, &mut params, "stack")?;
        let cols = self.stack.surviving_columns(keep);
        let head = LmHead {
            proj_w: params.add("head.proj_w", self.params.get(self.head.proj_w).select_rows(&cols)),
            proj_b: params.add("head.proj_b", self.params.get(self.head.proj_b).clone()),
            out_w: params.add("head.out_w", self.params.get(self.head.out_w).clone()),
            out_b: params.add("head.out_b", self.params.get(self.head.out_b).clone()),
            proj_dim: self.head.proj_dim,
        };
        Ok(LmModel {
            direction: self.direction,
            vocab_size: self.vocab_size,
            params,
            embedding,
            stack,
            head,
        })
    }

    /// Next-token distributions (one row per input position) for a single
    /// sequence, already in this model's reading order.
    pub fn next_token_probs(&self, tokens: &[usize], mask: Option<&LayerMask>) -> Result<Tensor> {
        let mut g = Graph::new();
        let steps: Vec<Vec<usize>> = tokens.iter().map(|&t| vec![t]).collect();
        let gates = mask.map(|m| g.constant(m.to_tensor()));
        let out = self.run_stack(
            &mut g,
            &steps,
            &StackState::zeros(&self.stack, 1),
            StackMode { gates, keep: None },
        )?;
        let h = g.concat_rows(&out.outputs)?;
        let logits = self.head_logits(&mut g, h)?;
        Ok(g.value(logits).softmax_rows())
    }
}

/// Time-major ids for one truncated-BPTT window: `inputs[t][b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

/// Split a stream into `batch` contiguous rows and cut windows of `unroll`
/// steps. Tokens that do not fill a full row are dropped.
pub fn batchify(stream: &[usize], batch: usize, unroll: usize) -> Vec<Window> {
    if stream.len() < 2 || batch == 0 || unroll == 0 {
        return Vec::new();
    }
    let row_len = (stream.len() - 1) / batch;
    if row_len == 0 {
        return Vec::new();
    }
    let mut windows = Vec::new();
    let mut start = 0;
    while start < row_len {
        let steps = unroll.min(row_len - start);
        let mut inputs = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps);
        for t in start..start + steps {
            inputs.push((0..batch).map(|b| stream[b * row_len + t]).collect());
            targets.push((0..batch).map(|b| stream[b * row_len + t + 1]).collect());
        }
        windows.push(Window { inputs, targets });
        start += steps;
    }
    windows
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmTrainConfig {
    pub unroll: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
    pub layer_dropout: f64,
    pub epochs: usize,
    pub eval_batch: usize,
    pub seed: u64,
    /// Stop once dev perplexity falls to or below this value.
    pub target_dev_ppl: Option<f64>,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            unroll: 20,
            batch: 128,
            lr: 0.001,
            clip: 5.0,
            layer_dropout: 0.5,
            epochs: 10,
            eval_batch: 16,
            seed: 1,
            target_dev_ppl: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmEpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub dev_ppl: f64,
}

#[derive(Clone, Debug)]
pub struct LmTrainReport {
    pub log: Vec<LmEpochLog>,
    pub best_epoch: usize,
    pub best_dev_ppl: f64,
    /// Largest global gradient norm applied in any step, after clipping.
    pub max_applied_grad_norm: f64,
}

/// Epoch-at-a-time trainer (Adam, clipping, layer-wise dropout).
pub struct LmTrainer {
    pub model: LmModel,
    pub cfg: LmTrainConfig,
    adam: Adam,
    dropout_rng: rng::Stream,
    epoch: usize,
    max_applied: f64,
}

impl LmTrainer {
    pub fn new(model: LmModel, cfg: LmTrainConfig) -> Self {
        let adam = Adam::new(&model.params, cfg.lr);
        let dropout_rng = rng::stream(cfg.seed, &format!("dropout.lm.{}", model.direction));
        LmTrainer {
            model,
            cfg,
            adam,
            dropout_rng,
            epoch: 0,
            max_applied: 0.0,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over `stream` (in natural order; reversed here for backward
    /// models). States are carried across windows and reset per epoch.
    /// Returns the mean training NLL.
    pub fn run_epoch(&mut self, stream: &[usize]) -> Result<f64> {
        let oriented = self.model.orient(stream);
        let windows = batchify(&oriented, self.cfg.batch, self.cfg.unroll);
        if windows.is_empty() {
            return Err(Error::Empty("training stream too short for one window".into()));
        }
        let batch = windows[0].inputs[0].len();
        let mut state = StackState::zeros(&self.model.stack, batch);
        let mut total = 0.0;
        let mut count = 0usize;
        let layers = self.model.stack.num_layers();
        for (wi, window) in windows.iter().enumerate() {
            let keep = layerwise_dropout_masks(layers, self.cfg.layer_dropout, &mut self.dropout_rng);
            let mut g = Graph::new();
            let (loss, next) = self.model.window_loss(
                &mut g,
                window,
                &state,
                StackMode {
                    gates: None,
                    keep: Some(&keep),
                },
            )?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "{} LM loss {value} at epoch {} window {wi}",
                    self.model.direction, self.epoch
                )));
            }
            let grads = g.backward(loss)?;
            self.model.params.zero_grad();
            self.model.params.accumulate(&g, &grads);
            let norm = clip_grad_norm(&mut [&mut self.model.params], self.cfg.clip);
            self.max_applied = self.max_applied.max(norm.min(self.cfg.clip));
            self.adam.step(&mut self.model.params)?;
            state = next;
            let n = window.targets.len() * batch;
            total += value * n as f64;
            count += n;
            if wi % 200 == 0 {
                debug!("{} epoch {} window {wi}/{} nll {value:.4}", self.model.direction, self.epoch, windows.len());
            }
        }
        self.epoch += 1;
        Ok(total / count as f64)
    }
}

/// `exp(mean NLL)` over `stream` with layer-wise dropout off.
pub fn perplexity(
    model: &LmModel,
    stream: &[usize],
    mask: Option<&LayerMask>,
    batch: usize,
    unroll: usize,
) -> Result<f64> {
    let oriented = model.orient(stream);
    let batch = batch.max(1).min(oriented.len().saturating_sub(1).max(1));
    let windows = batchify(&oriented, batch, unroll);
    if windows.is_empty() {
        return Err(Error::Empty("perplexity of an empty stream".into()));
    }
    let rows = windows[0].inputs[0].len();
    let mut state = StackState::zeros(&model.stack, rows);
    let mut total = 0.0;
    let mut count = 0usize;
    for window in &windows {
        let mut g = Graph::new();
        let gates = mask.map(|m| g.constant(m.to_tensor()));
        let (loss, next) = model.window_loss(&mut g, window, &state, StackMode { gates, keep: None })?;
        let n = window.targets.len() * rows;
        total += g.value(loss).item() * n as f64;
        count += n;
        state = next;
    }
    Ok((total / count as f64).exp())
}

/// Perplexity of an add-one smoothed unigram model estimated on `train`.
pub fn unigram_perplexity(train: &[usize], dev: &[usize], vocab_size: usize) -> Result<f64> {
    if dev.is_empty() {
        return Err(Error::Empty("unigram perplexity of an empty stream".into()));
    }
    let mut counts = vec![1.0f64; vocab_size];
    for &t in train {
        counts[t] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let nll: f64 = dev.iter().map(|&t| -(counts[t] / total).ln()).sum();
    Ok((nll / dev.len() as f64).exp())
}

/// Train `model` for up to `cfg.epochs` epochs, keeping the parameters with
/// the best dev perplexity.
pub fn train_lm(
    model: LmModel,
    train: &[usize],
    dev: &[usize],
    cfg: &LmTrainConfig,
    mut on_epoch: impl FnMut(&LmEpochLog),
) -> Result<(LmModel, LmTrainReport)> {
    let mut trainer = LmTrainer::new(model, cfg.clone());
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    for epoch in 0..cfg.epochs {
        let train_nll = trainer.run_epoch(train)?;
        let dev_ppl = perplexity(&trainer.model, dev, None, cfg.eval_batch, cfg.unroll)?;
        if !dev_ppl.is_finite() {
            return Err(Error::Diverged(format!("dev perplexity {dev_ppl} at epoch {epoch}")));
        }
        let entry = LmEpochLog {
            epoch,
            train_nll,
            dev_ppl,
        };
        info!(
            "{} lm epoch {epoch}: train nll {train_nll:.4}, dev ppl {dev_ppl:.3}",
            trainer.model.direction
        );
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(b, _, _)| dev_ppl < *b) {
            best = Some((dev_ppl, epoch, trainer.model.params.clone()));
        }
        if cfg.target_dev_ppl.is_some_and(|t| dev_ppl <= t) {
            break;
        }
    }
    let max_applied_grad_norm = trainer.max_applied;
    let mut model = trainer.model;
    let (best_dev_ppl, best_epoch, params) = best.ok_or_else(|| Error::Config("epochs must be > 0".into()))?;
    model.params = params;
    Ok((
        model,
        LmTrainReport {
            log,
            best_epoch,
            best_dev_ppl,
            max_applied_grad_norm,
        },
    ))
}

/// Average of forward and backward perplexities, the usual single number
/// reported for a coupled pair.
pub fn averaged_perplexity(forward: f64, backward: f64) -> f64 {
    (forward + backward) / 2.0
}

/// Shuffle helper for callers that want sentence-level shuffling before
/// concatenating a stream.
pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut rng::stream(seed, "batch.lm"));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize, layers: usize, seed: u64) -> LmModel {
        LmModel::new(
            LmDims {
                vocab_size: vocab,
                embed_dim: 4,
                hidden_dim: 4,
                layers,
                proj_dim: 5,
            },
            Direction::Forward,
            seed,
        )
    }

    #[test]
    fn batchify_layout() {
        let s: Vec<usize> = (0..11).collect();
        let w = batchify(&s, 2, 3);
        // row_len = 5: rows [0..5) and [5..10)
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].inputs, vec![vec![0, 5], vec![1, 6], vec![2, 7]]);
        assert_eq!(w[0].targets, vec![vec![1, 6], vec![2, 7], vec![3, 8]]);
        assert_eq!(w[1].inputs, vec![vec![3, 8], vec![4, 9]]);
    }

    #[test]
    fn single_word_vocab_has_zero_loss() {
        let m = tiny(1, 2, 3);
        let ppl = perplexity(&m, &[0; 30], None, 2, 5).unwrap();
        assert!((ppl - 1.0).abs() < 1e-12);
    }

    #[test]
    fn untrained_loss_is_near_log_vocab() {
        let v = 50;
        let m = tiny(v, 2, 4);
        let stream: Vec<usize> = (0..400).map(|i| (i * 7 + 3) % v).collect();
        let ppl = perplexity(&m, &stream, None, 4, 10).unwrap();
        let nll = ppl.ln();
        let lnv = (v as f64).ln();
        assert!((nll - lnv).abs() / lnv < 0.05, "{nll} vs {lnv}");
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let mut m = tiny(100, 1, 5);
        // zero output weights and bias: uniform softmax
        m.params.get_mut(m.head.out_w).fill(0.0);
        m.params.get_mut(m.head.out_b).fill(0.0);
        let stream: Vec<usize> = (0..300).map(|i| (i * 13) % 100).collect();
        let ppl = perplexity(&m, &stream, None, 3, 7).unwrap();
        assert!((ppl - 100.0).abs() < 1e-9, "{ppl}");
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = tiny(9, 2, 6);
        let p = m.next_token_probs(&[1, 2, 3, 4], None).unwrap();
        for r in 0..p.rows() {
            assert!((p.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn all_ones_mask_matches_unmasked() {
        let m = tiny(9, 3, 7);
        let stream: Vec<usize> = (0..120).map(|i| (i * 5) % 9).collect();
        let a = perplexity(&m, &stream, None, 2, 6).unwrap();
        let b = perplexity(&m, &stream, Some(&LayerMask::ones(3)), 2, 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backward_model_on_palindrome_matches_forward() {
        let f = tiny(6, 2, 8);
        let mut b = f.clone();
        b.direction = Direction::Backward;
        let pal = [1, 2, 3, 4, 3, 2, 1, 0, 5, 0, 1, 2, 3, 4, 3, 2, 1];
        let a = perplexity(&f, &pal, None, 1, 4).unwrap();
        let c = perplexity(&b, &pal, None, 1, 4).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn deleted_model_matches_masked_perplexity() {
        let m = tiny(9, 4, 13);
        let keep = [true, false, true, false];
        let d = m.delete_layers(&keep).unwrap();
        assert_eq!(d.stack.layer_ids, vec![0, 2]);
        let stream: Vec<usize> = (0..90).map(|i| (i * 4 + 1) % 9).collect();
        let a = perplexity(&m, &stream, Some(&LayerMask::from_bits(&keep)), 2, 5).unwrap();
        let b = perplexity(&d, &stream, None, 2, 5).unwrap();
        assert!((a - b).abs() < 1e-10 * a, "{a} {b}");
    }

    #[test]
    fn out_of_vocab_target_is_an_error() {
        let m = tiny(5, 1, 9);
        assert!(matches!(
            perplexity(&m, &[1, 2, 9, 1], None, 1, 3),
            Err(Error::OutOfVocab { .. })
        ));
    }

    #[test]
    fn empty_stream_is_an_error() {
        let m = tiny(5, 1, 9);
        assert!(matches!(perplexity(&m, &[], None, 1, 3), Err(Error::Empty(_))));
    }

    #[test]
    fn lm_gradient_check() {
        let mut m = LmModel::new(
            LmDims {
                vocab_size: 7,
                embed_dim: 3,
                hidden_dim: 4,
                layers: 2,
                proj_dim: 5,
            },
            Direction::Forward,
            10,
        );
        // widen the tiny default inits so gradients are well above FD noise
        let mut r = rng::stream(11, "wide");
        for i in 0..m.params.len() {
            let id = ParamId(i);
            let (rr, cc) = m.params.get(id).shape();
            m.params.set(id, crate::params::uniform(rr, cc, 0.6, &mut r));
        }
        let window = Window {
            inputs: vec![vec![1, 2], vec![3, 4], vec![5, 6]],
            targets: vec![vec![3, 4], vec![5, 6], vec![0, 1]],
        };
        let stack = m.stack.clone();
        let view = m.clone();
        let err = crate::params::grad_check_sets(&mut [&mut m.params], 1e-5, |g, sets| {
            let keep = [true, false];
            let (loss, _) = view.window_loss_with(
                sets[0],
                g,
                &window,
                &StackState::zeros(&stack, 2),
                StackMode { gates: None, keep: Some(&keep) },
            )?;
            Ok(loss)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn learns_a_cycle() {
        let m = LmModel::new(
            LmDims {
                vocab_size: 3,
                embed_dim: 4,
                hidden_dim: 8,
                layers: 2,
                proj_dim: 8,
            },
            Direction::Forward,
            12,
        );
        let stream: Vec<usize> = (0..2000).map(|i| i % 2).collect();
        let cfg = LmTrainConfig {
            unroll: 10,
            batch: 4,
            lr: 0.01,
            layer_dropout: 0.0,
            epochs: 5,
            eval_batch: 2,
            seed: 3,
            ..Default::default()
        };
        let (model, report) = train_lm(m, &stream, &stream[..400], &cfg, |_| {}).unwrap();
        let ppl = perplexity(&model, &stream[..400], None, 2, 10).unwrap();
        assert!(ppl < 1.1, "{ppl}");
        assert!(report.max_applied_grad_norm <= 5.0 + 1e-12);
    }
}
