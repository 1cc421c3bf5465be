//! Task-guided layer selection over a trained tagger.
//!
//! The gates of both LM stacks are optimized jointly with the tagger's own
//! parameters (LM weights stay frozen) by projected gradient descent with
//! momentum on `task loss + lambda0 * penalty(z)`. Afterwards the gates are
//! rounded and the dropped layers are physically deleted.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;

use super::flops::{estimate_flops, ModelShape, DEFAULT_CHARS_PER_WORD};
use super::regularizer::{penalty, penalty_grad, RegularizerSpec};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::params::decayed_lr;
use crate::recurrent::LayerMask;
use crate::rng;
use crate::tagger::model::{Encoded, LmInput, Tagger};
use crate::tagger::train::{accumulate, evaluate, lm_cache, zero_grads, TaggerOptimizer, TaggerTrainConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PruneConfig {
    pub spec: RegularizerSpec,
    /// Optimizer settings; the step-size schedule restarts at epoch 0.
    pub train: TaggerTrainConfig,
    /// Upper bound on pruning epochs.
    pub epochs: usize,
    /// Optional cap on optimizer steps across epochs.
    pub max_steps: Option<usize>,
    pub round_threshold: f64,
    /// Largest `min(z, 1 - z)` accepted as near-binary before rounding.
    pub binary_tolerance: f64,
    pub chars_per_word: f64,
    /// End as soon as every gate is binary and within budget, instead of
    /// training the tagger for the remaining epochs.
    pub stop_when_settled: bool,
}

impl PruneConfig {
    pub fn new(spec: RegularizerSpec, train: TaggerTrainConfig) -> Self {
        PruneConfig {
            spec,
            train,
            epochs: 10,
            max_steps: None,
            round_threshold: 0.5,
            binary_tolerance: 0.1,
            chars_per_word: DEFAULT_CHARS_PER_WORD,
            stop_when_settled: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneStep {
    pub step: usize,
    pub epoch: usize,
    pub penalty: f64,
    pub l0_fwd: usize,
    pub l0_bwd: usize,
    pub z_fwd: Vec<f64>,
    pub z_bwd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneReport {
    pub spec: RegularizerSpec,
    pub history: Vec<PruneStep>,
    pub dev_f1_per_epoch: Vec<f64>,
    /// Relaxed gates at the end of optimization.
    pub z_fwd: Vec<f64>,
    pub z_bwd: Vec<f64>,
    pub keep_fwd: Vec<bool>,
    pub keep_bwd: Vec<bool>,
    pub distance_from_binary: f64,
    pub near_binary: bool,
    pub flops_before: f64,
    pub flops_after: f64,
    pub dev_f1_before: f64,
    /// Rounded gates applied as masks, before deletion.
    pub dev_f1_masked: f64,
    pub dev_f1_after: f64,
    pub lm_weights_unchanged: bool,
}

impl PruneReport {
    pub fn flops_reduction(&self) -> f64 {
        if self.flops_before == 0.0 {
            0.0
        } else {
            1.0 - self.flops_after / self.flops_before
        }
    }

    /// Surviving original layer indices of one stack.
    pub fn kept(keep: &[bool]) -> Vec<usize> {
        keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }

    pub fn csv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";");
        let mut out = String::from("step,epoch,penalty,l0_fwd,l0_bwd,z_fwd,z_bwd\n");
        for s in &self.history {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{},{}",
                s.step,
                s.epoch,
                s.penalty,
                s.l0_fwd,
                s.l0_bwd,
                join(&s.z_fwd),
                join(&s.z_bwd)
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "regularizer {} lambda0={} lambda1={}",
            self.spec.kind, self.spec.lambda0, self.spec.lambda1
        );
        let _ = writeln!(s, "steps {}", self.history.len());
        let _ = writeln!(s, "final z forward  {:?}", self.z_fwd);
        let _ = writeln!(s, "final z backward {:?}", self.z_bwd);
        let _ = writeln!(s, "kept forward layers  {:?}", Self::kept(&self.keep_fwd));
        let _ = writeln!(s, "kept backward layers {:?}", Self::kept(&self.keep_bwd));
        let _ = writeln!(
            s,
            "distance from binary {:.3e}{}",
            self.distance_from_binary,
            if self.near_binary { "" } else { " (NOT near-binary: hard-rounded)" }
        );
        let _ = writeln!(
            s,
            "FLOPs/word {:.0} -> {:.0} ({:.1}% removed)",
            self.flops_before,
            self.flops_after,
            100.0 * self.flops_reduction()
        );
        let _ = writeln!(
            s,
            "dev F1 {:.4} -> {:.4} (rounded masks {:.4})",
            self.dev_f1_before, self.dev_f1_after, self.dev_f1_masked
        );
        let _ = write!(s, "LM weights unchanged: {}", self.lm_weights_unchanged);
        s
    }

    pub fn write(&self, csv_path: &Path, summary_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(summary_path, self.summary() + "\n").map_err(|e| Error::io(summary_path, e))
    }
}

/// Gradient-descent state for one gate vector.
struct GateOpt {
    z: LayerMask,
    velocity: Vec<f64>,
    grad: Vec<f64>,
}

impl GateOpt {
    fn new(z: LayerMask) -> Self {
        let n = z.len();
        GateOpt {
            z,
            velocity: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    fn step(&mut self, spec: &RegularizerSpec, n: usize, lr: f64, momentum: f64) -> Result<()> {
        let reg = penalty_grad(spec, &self.z.z)?;
        for i in 0..self.z.len() {
            let g = self.grad[i] / n as f64 + spec.lambda0 * reg[i];
            self.velocity[i] = momentum * self.velocity[i] + g;
            self.z.z[i] -= lr * self.velocity[i];
        }
        self.z.project();
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        Ok(())
    }

    fn settled(&self, spec: &RegularizerSpec) -> bool {
        self.z.is_binary() && self.z.l0() <= spec.lambda1
    }
}

/// Prune the LM layers feeding `tagger`. Returns the tagger with physically
/// compressed LMs and the run report.
pub fn prune(mut tagger: Tagger, train: &[Encoded], dev: &[Encoded], cfg: &PruneConfig) -> Result<(Tagger, PruneReport)> {
    let (depth_f, depth_b, tie, checksum) = {
        let e = tagger
            .embedder
            .as_ref()
            .ok_or_else(|| Error::Contract("pruning needs a tagger with contextual features".into()))?;
        (e.fwd.stack.num_layers(), e.bwd.stack.num_layers(), e.tie_masks, e.lm_checksum())
    };
    cfg.spec.validate(depth_f.min(depth_b))?;
    if tie && depth_f != depth_b {
        return Err(Error::Config("tied masks need stacks of equal depth".into()));
    }
    if train.is_empty() {
        return Err(Error::Empty("no training sentences for pruning".into()));
    }
    let flops_before = estimate_flops(&ModelShape::of_tagger(&tagger, cfg.chars_per_word)).total();
    let dev_f1_before = evaluate(&tagger, dev, &lm_cache(&tagger, dev)?)?.f1;

    let (mut zf, mut zb) = {
        let e = tagger.embedder.as_ref().expect("checked above");
        (GateOpt::new(e.fwd_mask.clone()), GateOpt::new(e.bwd_mask.clone()))
    };
    let mut opt = TaggerOptimizer::new(&tagger, cfg.train.momentum);
    let mut batch_rng = rng::stream(cfg.train.seed, "batch.prune");
    let mut drop_rng = rng::stream(cfg.train.seed, "dropout.prune");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut dev_f1_per_epoch = Vec::new();

    'epochs: for epoch in 0..cfg.epochs {
        let lr = decayed_lr(cfg.train.lr0, cfg.train.decay, epoch);
        order.shuffle(&mut batch_rng);
        for chunk in order.chunks(cfg.train.batch.max(1)) {
            if cfg.max_steps.is_some_and(|m| history.len() >= m) {
                break;
            }
            zero_grads(&mut tagger);
            for &i in chunk {
                let sent = &train[i];
                let masks = (cfg.train.dropout > 0.0)
                    .then(|| tagger.dropout_masks(sent.len(), cfg.train.dropout, &mut drop_rng));
                let mut g = Graph::new();
                let vf = g.variable(zf.z.to_tensor());
                let vb = if tie { vf } else { g.variable(zb.z.to_tensor()) };
                let loss = tagger.nll(&mut g, sent, LmInput::Gated(vf, vb), masks.as_ref())?;
                let v = g.value(loss).item();
                if !v.is_finite() {
                    return Err(Error::Diverged(format!("pruning loss {v} at epoch {epoch}")));
                }
                let grads = g.backward(loss)?;
                accumulate(&mut tagger, &g, &grads);
                let add = |dst: &mut Vec<f64>, t: Option<&Tensor>| {
                    if let Some(t) = t {
                        dst.iter_mut().zip(t.data()).for_each(|(d, s)| *d += s);
                    }
                };
                add(&mut zf.grad, grads.get(vf));
                if !tie {
                    add(&mut zb.grad, grads.get(vb));
                }
            }
            opt.step(&mut tagger, chunk.len(), lr, cfg.train.clip)?;
            zf.step(&cfg.spec, chunk.len(), lr, cfg.train.momentum)?;
            if tie {
                zb.z = zf.z.clone();
            } else {
                zb.step(&cfg.spec, chunk.len(), lr, cfg.train.momentum)?;
            }
            let pen = penalty(&cfg.spec, &zf.z.z)? + if tie { 0.0 } else { penalty(&cfg.spec, &zb.z.z)? };
            history.push(PruneStep {
                step: history.len(),
                epoch,
                penalty: pen,
                l0_fwd: zf.z.l0(),
                l0_bwd: zb.z.l0(),
                z_fwd: zf.z.z.clone(),
                z_bwd: zb.z.z.clone(),
            });
        }
        {
            let e = tagger.embedder.as_mut().expect("checked above");
            e.fwd_mask = zf.z.clone();
            e.bwd_mask = zb.z.clone();
        }
        let f1 = evaluate(&tagger, dev, &[])?.f1;
        info!(
            "prune epoch {epoch}: z_fwd {:?} z_bwd {:?} dev F1 {f1:.4}",
            zf.z.z, zb.z.z
        );
        dev_f1_per_epoch.push(f1);
        let out_of_steps = cfg.max_steps.is_some_and(|m| history.len() >= m);
        if out_of_steps || (cfg.stop_when_settled && zf.settled(&cfg.spec) && zb.settled(&cfg.spec)) {
            break 'epochs;
        }
    }

    let distance = zf.z.distance_from_binary().max(zb.z.distance_from_binary());
    let near_binary = distance <= cfg.binary_tolerance;
    if !near_binary {
        warn!("gates did not reach near-binary values (distance {distance:.3}); rounding anyway");
    }
    let rf = zf.z.rounded(cfg.round_threshold);
    let rb = zb.z.rounded(cfg.round_threshold);
    let lm_weights_unchanged = tagger.embedder.as_ref().map(|e| e.lm_checksum()) == Some(checksum);
    {
        let e = tagger.embedder.as_mut().expect("checked above");
        e.fwd_mask = rf.clone();
        e.bwd_mask = rb.clone();
    }
    let dev_f1_masked = evaluate(&tagger, dev, &[])?.f1;
    let compressed = tagger.embedder.as_ref().expect("checked above").delete_pruned_layers()?;
    tagger.embedder = Some(compressed);
    let dev_f1_after = evaluate(&tagger, dev, &[])?.f1;
    let flops_after = estimate_flops(&ModelShape::of_tagger(&tagger, cfg.chars_per_word)).total();

    let to_bits = |m: &LayerMask| m.z.iter().map(|&v| v == 1.0).collect::<Vec<_>>();
    let report = PruneReport {
        spec: cfg.spec,
        history,
        dev_f1_per_epoch,
        z_fwd: zf.z.z,
        z_bwd: zb.z.z,
        keep_fwd: to_bits(&rf),
        keep_bwd: to_bits(&rb),
        distance_from_binary: distance,
        near_binary,
        flops_before,
        flops_after,
        dev_f1_before,
        dev_f1_masked,
        dev_f1_after,
        lm_weights_unchanged,
    };
    info!("{}", report.summary());
    Ok((tagger, report))
}
