//! First-order linear-chain CRF with virtual START/STOP states.
//!
//! Transitions are a `(Y+1) x (Y+1)` matrix: entry `[a, b]` scores moving
//! from label `a` to label `b`, row `Y` is the START state and column `Y`
//! the STOP state. Entry `[Y, Y]` is unused.

use crate::autograd::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Tensor};

fn check(emit: &Tensor, trans: &Tensor) -> Result<usize> {
    let y = emit.cols();
    if emit.rows() == 0 {
        return Err(Error::Empty("CRF over an empty sequence".into()));
    }
    if trans.shape() != (y + 1, y + 1) {
        return Err(Error::dim(
            "crf",
            format!("emissions {:?} need transitions {:?}, got {:?}", emit.shape(), (y + 1, y + 1), trans.shape()),
        ));
    }
    Ok(y)
}

fn check_labels(labels: &[usize], t: usize, y: usize) -> Result<()> {
    if labels.len() != t {
        return Err(Error::dim("crf", format!("{} labels for {t} steps", labels.len())));
    }
    match labels.iter().find(|&&l| l >= y) {
        Some(&id) => Err(Error::InvalidLabel { id, count: y }),
        None => Ok(()),
    }
}

/// Unnormalized log score of one label path.
pub fn path_score(emit: &Tensor, trans: &Tensor, labels: &[usize]) -> Result<f64> {
    let y = check(emit, trans)?;
    check_labels(labels, emit.rows(), y)?;
    let mut s = trans.get(y, labels[0]);
    for (t, &l) in labels.iter().enumerate() {
        s += emit.get(t, l);
        if t > 0 {
            s += trans.get(labels[t - 1], l);
        }
    }
    Ok(s + trans.get(labels[labels.len() - 1], y))
}

fn alphas(emit: &Tensor, trans: &Tensor, y: usize) -> Vec<Vec<f64>> {
    let t_len = emit.rows();
    let mut a = vec![vec![0.0; y]; t_len];
    for l in 0..y {
        a[0][l] = trans.get(y, l) + emit.get(0, l);
    }
    let mut buf = vec![0.0; y];
    for t in 1..t_len {
        for l in 0..y {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = a[t - 1][p] + trans.get(p, l);
            }
            a[t][l] = emit.get(t, l) + log_sum_exp(&buf);
        }
    }
    a
}

/// Log partition function by the forward algorithm.
pub fn log_partition(emit: &Tensor, trans: &Tensor) -> Result<f64> {
    let y = check(emit, trans)?;
    let a = alphas(emit, trans, y);
    let last = &a[emit.rows() - 1];
    let end: Vec<f64> = (0..y).map(|l| last[l] + trans.get(l, y)).collect();
    Ok(log_sum_exp(&end))
}

/// Posterior marginals: `(log Z, unary T x Y, expected transition counts)`.
pub fn marginals(emit: &Tensor, trans: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    let y = check(emit, trans)?;
    let t_len = emit.rows();
    let a = alphas(emit, trans, y);
    let mut b = vec![vec![0.0; y]; t_len];
    for l in 0..y {
        b[t_len - 1][l] = trans.get(l, y);
    }
    let mut buf = vec![0.0; y];
    for t in (0..t_len - 1).rev() {
        for l in 0..y {
            for (n, v) in buf.iter_mut().enumerate() {
                *v = trans.get(l, n) + emit.get(t + 1, n) + b[t + 1][n];
            }
            b[t][l] = log_sum_exp(&buf);
        }
    }
    let end: Vec<f64> = (0..y).map(|l| a[t_len - 1][l] + trans.get(l, y)).collect();
    let log_z = log_sum_exp(&end);

    let mut unary = Tensor::zeros(t_len, y);
    for t in 0..t_len {
        for l in 0..y {
            unary.set(t, l, (a[t][l] + b[t][l] - log_z).exp());
        }
    }
    let mut pair = Tensor::zeros(y + 1, y + 1);
    for l in 0..y {
        pair.set(y, l, unary.get(0, l));
        pair.set(l, y, unary.get(t_len - 1, l));
    }
    for t in 1..t_len {
        for p in 0..y {
            for n in 0..y {
                let lp = a[t - 1][p] + trans.get(p, n) + emit.get(t, n) + b[t][n] - log_z;
                pair.set(p, n, pair.get(p, n) + lp.exp());
            }
        }
    }
    Ok((log_z, unary, pair))
}

/// Highest-scoring path and its score. Ties go to the lowest label index.
pub fn viterbi(emit: &Tensor, trans: &Tensor) -> Result<(Vec<usize>, f64)> {
    let y = check(emit, trans)?;
    let t_len = emit.rows();
    let mut score: Vec<f64> = (0..y).map(|l| trans.get(y, l) + emit.get(0, l)).collect();
    let mut back = vec![vec![0usize; y]; t_len];
    for t in 1..t_len {
        let mut next = vec![0.0; y];
        for l in 0..y {
            let mut best = 0;
            let mut best_s = score[0] + trans.get(0, l);
            for p in 1..y {
                let s = score[p] + trans.get(p, l);
                if s > best_s {
                    best = p;
                    best_s = s;
                }
            }
            back[t][l] = best;
            next[l] = best_s + emit.get(t, l);
        }
        score = next;
    }
    let mut last = 0;
    let mut best_s = score[0] + trans.get(0, y);
    for l in 1..y {
        let s = score[l] + trans.get(l, y);
        if s > best_s {
            last = l;
            best_s = s;
        }
    }
    let mut path = vec![last; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, best_s))
}

struct CrfNll {
    labels: Vec<usize>,
    unary: Tensor,
    pair: Tensor,
}

impl Function for CrfNll {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.item();
        let y = self.unary.cols();
        let mut ge = self.unary.clone();
        let mut gt = self.pair.clone();
        for (t, &l) in self.labels.iter().enumerate() {
            ge.set(t, l, ge.get(t, l) - 1.0);
            let from = if t == 0 { y } else { self.labels[t - 1] };
            gt.set(from, l, gt.get(from, l) - 1.0);
        }
        let last = self.labels[self.labels.len() - 1];
        gt.set(last, y, gt.get(last, y) - 1.0);
        ge.scale_assign(g);
        gt.scale_assign(g);
        vec![Some(ge), Some(gt)]
    }
}

/// `-log p(labels | emissions)` as a graph node over `emit` (`T x Y`) and
/// `trans` (`(Y+1) x (Y+1)`).
pub fn crf_nll(g: &mut Graph, emit: Var, trans: Var, labels: &[usize]) -> Result<Var> {
    let (e, t) = (g.value(emit), g.value(trans));
    let y = check(e, t)?;
    check_labels(labels, e.rows(), y)?;
    let gold = path_score(e, t, labels)?;
    let (log_z, unary, pair) = marginals(e, t)?;
    let nll = (log_z - gold).max(0.0);
    let func = CrfNll {
        labels: labels.to_vec(),
        unary,
        pair,
    };
    Ok(g.custom(Box::new(func), &[emit, trans], Tensor::scalar(nll)))
}
