//! Named parameter storage, gradient accumulation and the two optimizers
//! used for training (Adam for language models, SGD with momentum for the
//! tagger and the layer gates).

use rand::Rng;

use crate::autograd::{next_set_id, Graph, Gradients, ParamKey, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// An ordered, named collection of trainable tensors.
#[derive(Debug)]
pub struct ParamSet {
    id: u64,
    params: Vec<Param>,
    /// When false, bound leaves do not require gradients.
    pub trainable: bool,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet {
            id: next_set_id(),
            params: self.params.clone(),
            trainable: self.trainable,
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            id: next_set_id(),
            params: Vec::new(),
            trainable: true,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    /// Replace a value, resizing its gradient buffer to match.
    pub fn set(&mut self, id: ParamId, value: Tensor) {
        let p = &mut self.params[id.0];
        p.grad = Tensor::zeros(value.rows(), value.cols());
        p.value = value;
    }

    /// In-place access; the shape must not change (use [`ParamSet::set`]).
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey {
            set: self.id,
            index: id.0,
        }
    }

    /// Bind one parameter into a graph.
    pub fn bind(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(self.key(id), &self.params[id.0].value, self.trainable)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Add the gradients of every leaf of this set bound into `g`.
    pub fn accumulate(&mut self, g: &Graph, grads: &Gradients) {
        for (key, var) in g.bound_params() {
            if key.set != self.id {
                continue;
            }
            if let Some(d) = grads.get(*var) {
                self.params[key.index].grad.add_assign(d);
            }
        }
    }

    pub fn grad_sq_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sq_norm()).sum()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            p.grad.scale_assign(s);
        }
    }

    /// Order-sensitive digest of all values, for freeze checks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in p.value.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Clip the joint gradient norm of several sets to `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(sets: &mut [&mut ParamSet], max_norm: f64) -> f64 {
    let norm = sets.iter().map(|s| s.grad_sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for set in sets.iter_mut() {
            set.scale_grads(s);
        }
    }
    norm
}

pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// Glorot-uniform init for a `fan_in x fan_out` matrix.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform(fan_in, fan_out, bound, rng)
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(set: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Tensor> = set
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, set: &mut ParamSet) -> Result<()> {
        if self.m.len() != set.len() {
            return Err(Error::Contract("optimizer state does not match parameter set".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in set.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum: `v = mu * v + g; w -= lr * v`.
#[derive(Clone, Debug)]
pub struct Momentum {
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Momentum {
    pub fn new(set: &ParamSet, momentum: f64) -> Self {
        Momentum {
            momentum,
            velocity: set
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn step(&mut self, set: &mut ParamSet, lr: f64) -> Result<()> {
        if self.velocity.len() != set.len() {
            return Err(Error::Contract("optimizer state does not match parameter set".into()));
        }
        for (p, vel) in set.params.iter_mut().zip(&mut self.velocity) {
            for ((w, &g), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(vel.data_mut())
            {
                *v = self.momentum * *v + g;
                *w -= lr * *v;
            }
        }
        Ok(())
    }
}

/// Step size `lr0 / (1 + decay * epoch)`.
pub fn decayed_lr(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 / (1.0 + decay * epoch as f64)
}

/// Finite-difference check over every entry of several parameter sets.
///
/// `build` is re-run for each perturbation and must be deterministic. The
/// error measure matches [`crate::autograd::grad_check`].
pub fn grad_check_sets<F>(sets: &mut [&mut ParamSet], eps: f64, mut build: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &[&ParamSet]) -> Result<Var>,
{
    let mut eval = |sets: &mut [&mut ParamSet], grads: bool| -> Result<f64> {
        let mut g = Graph::new();
        let loss = {
            let views: Vec<&ParamSet> = sets.iter().map(|s| &**s).collect();
            build(&mut g, &views)?
        };
        if grads {
            let gr = g.backward(loss)?;
            for s in sets.iter_mut() {
                s.zero_grad();
                s.accumulate(&g, &gr);
            }
        }
        Ok(g.value(loss).item())
    };
    eval(sets, true)?;
    let analytic: Vec<Vec<Tensor>> = sets
        .iter()
        .map(|s| s.iter().map(|p| p.grad.clone()).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for si in 0..sets.len() {
        if !sets[si].trainable {
            continue;
        }
        for pi in 0..sets[si].len() {
            for i in 0..sets[si].params[pi].value.len() {
                let orig = sets[si].params[pi].value.data()[i];
                sets[si].params[pi].value.data_mut()[i] = orig + eps;
                let plus = eval(sets, false)?;
                sets[si].params[pi].value.data_mut()[i] = orig - eps;
                let minus = eval(sets, false)?;
                sets[si].params[pi].value.data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[si][pi].data()[i];
                if !a.is_finite() || !numeric.is_finite() {
                    return Ok(f64::INFINITY);
                }
                worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_halves_at_epoch_twenty() {
        assert_eq!(decayed_lr(0.015, 0.05, 0), 0.015);
        assert!((decayed_lr(0.015, 0.05, 20) - 0.0075).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_joint_norm() {
        let mut a = ParamSet::new();
        let id = a.add("w", Tensor::zeros(1, 2));
        a.params[id.0].grad = Tensor::row(&[3.0, 4.0]);
        let mut b = ParamSet::new();
        let id2 = b.add("v", Tensor::zeros(1, 1));
        b.params[id2.0].grad = Tensor::row(&[12.0]);
        let before = clip_grad_norm(&mut [&mut a, &mut b], 5.0);
        assert!((before - 13.0).abs() < 1e-12);
        let after = (a.grad_sq_norm() + b.grad_sq_norm()).sqrt();
        assert!((after - 5.0).abs() < 1e-12);
    }

    #[test]
    fn accumulate_is_additive_and_set_scoped() {
        let mut set = ParamSet::new();
        let w = set.add("w", Tensor::row(&[1.0, 2.0]));
        let other = ParamSet::new();
        for _ in 0..2 {
            let mut g = Graph::new();
            let v = set.bind(&mut g, w);
            let loss = g.sum(v);
            let grads = g.backward(loss).unwrap();
            set.accumulate(&g, &grads);
        }
        assert_eq!(set.grad(w).data(), &[2.0, 2.0]);
        assert_eq!(other.grad_sq_norm(), 0.0);
        set.zero_grad();
        assert_eq!(set.grad_sq_norm(), 0.0);
    }

    #[test]
    fn frozen_set_receives_no_gradient() {
        let mut set = ParamSet::new();
        let w = set.add("w", Tensor::row(&[1.0]));
        set.trainable = false;
        let mut g = Graph::new();
        let v = set.bind(&mut g, w);
        let s = g.sum(v);
        assert!(!g.requires_grad(s));
    }

    #[test]
    fn momentum_matches_hand_iteration() {
        let mut set = ParamSet::new();
        let w = set.add("w", Tensor::row(&[1.0]));
        let mut opt = Momentum::new(&set, 0.9);
        set.params[w.0].grad = Tensor::row(&[1.0]);
        opt.step(&mut set, 0.1).unwrap();
        opt.step(&mut set, 0.1).unwrap();
        // v1 = 1, w = 0.9; v2 = 1.9, w = 0.71
        assert!((set.get(w).item() - 0.71).abs() < 1e-12);
    }
}
