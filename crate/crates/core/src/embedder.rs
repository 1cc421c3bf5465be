//! Contextualized token representations from a frozen forward/backward LM
//! pair, and physical deletion of pruned layers.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::io::vocab::Vocab;
use crate::lm::{Direction, LmModel};
use crate::params::{glorot, ParamId, ParamSet};
use crate::recurrent::{LayerMask, StackMode, StackState};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ContextEmbedder {
    pub vocab: Vocab,
    pub fwd: LmModel,
    pub bwd: LmModel,
    pub fwd_mask: LayerMask,
    pub bwd_mask: LayerMask,
    /// Prune both stacks with one shared mask (requires equal depth).
    pub tie_masks: bool,
    /// `W_cr`, `b_cr`: trained with the tagger.
    pub params: ParamSet,
    pub cr_w: ParamId,
    pub cr_b: ParamId,
    pub r_dim: usize,
}

impl ContextEmbedder {
    pub fn new(vocab: Vocab, mut fwd: LmModel, mut bwd: LmModel, r_dim: usize, seed: u64) -> Result<Self> {
        if fwd.direction != Direction::Forward || bwd.direction != Direction::Backward {
            return Err(Error::Contract("embedder needs a forward and a backward LM".into()));
        }
        for m in [&fwd, &bwd] {
            if m.vocab_size != vocab.len() {
                return Err(Error::Contract(format!(
                    "{} LM has {} tokens but the vocabulary has {}",
                    m.direction,
                    m.vocab_size,
                    vocab.len()
                )));
            }
        }
        fwd.params.trainable = false;
        bwd.params.trainable = false;
        let mut r = rng::stream(seed, "init.embedder");
        let d = fwd.stack.output_dim() + bwd.stack.output_dim();
        let mut params = ParamSet::new();
        let cr_w = params.add("cr.w", glorot(d, r_dim, &mut r));
        let cr_b = params.add("cr.b", Tensor::zeros(1, r_dim));
        let fwd_mask = LayerMask::ones(fwd.stack.num_layers());
        let bwd_mask = LayerMask::ones(bwd.stack.num_layers());
        Ok(ContextEmbedder {
            vocab,
            fwd,
            bwd,
            fwd_mask,
            bwd_mask,
            tie_masks: false,
            params,
            cr_w,
            cr_b,
            r_dim,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.fwd.stack.output_dim() + self.bwd.stack.output_dim()
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        self.vocab.encode(words)
    }

    /// `[h_t ; h^r_t]` rows for a sentence of LM ids. Both models read an EOS
    /// first, so position `t` sees `x_1..x_t` forward and `x_t..x_T` backward.
    /// `gates` overrides the stored masks (used when pruning).
    pub fn lm_features(&self, g: &mut Graph, ids: &[usize], gates: Option<(Var, Var)>) -> Result<Var> {
        let rows = self.lm_feature_rows(g, ids, gates)?;
        g.concat_rows(&rows)
    }

    /// As [`ContextEmbedder::lm_features`], one `1 x D` node per token.
    pub fn lm_feature_rows(&self, g: &mut Graph, ids: &[usize], gates: Option<(Var, Var)>) -> Result<Vec<Var>> {
        if ids.is_empty() {
            return Err(Error::Empty("embedding an empty sentence".into()));
        }
        let (gf, gb) = match gates {
            Some(pair) => (Some(pair.0), Some(pair.1)),
            None => (self.const_gate(g, &self.fwd_mask), self.const_gate(g, &self.bwd_mask)),
        };
        let mut fwd_steps = vec![vec![Vocab::EOS_ID]];
        fwd_steps.extend(ids.iter().map(|&i| vec![i]));
        let mut bwd_steps = vec![vec![Vocab::EOS_ID]];
        bwd_steps.extend(ids.iter().rev().map(|&i| vec![i]));

        let f = self.fwd.run_stack(
            g,
            &fwd_steps,
            &StackState::zeros(&self.fwd.stack, 1),
            StackMode { gates: gf, keep: None },
        )?;
        let b = self.bwd.run_stack(
            g,
            &bwd_steps,
            &StackState::zeros(&self.bwd.stack, 1),
            StackMode { gates: gb, keep: None },
        )?;
        let t_len = ids.len();
        let mut rows = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let hf = f.outputs[t + 1];
            let hb = b.outputs[t_len - t];
            rows.push(g.concat(&[hf, hb])?);
        }
        Ok(rows)
    }

    fn const_gate(&self, g: &mut Graph, mask: &LayerMask) -> Option<Var> {
        if mask.is_all_ones() {
            None
        } else {
            Some(g.constant(mask.to_tensor()))
        }
    }

    /// LM features as a plain tensor under the stored masks.
    pub fn lm_feature_tensor(&self, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = self.lm_features(&mut g, ids, None)?;
        Ok(g.value(v).clone())
    }

    /// `r_t = ReLU(W_cr [h_t ; h^r_t] + b_cr)`.
    pub fn represent(&self, g: &mut Graph, features: Var) -> Result<Var> {
        self.represent_with(&self.params, g, features)
    }

    pub fn represent_with(&self, params: &ParamSet, g: &mut Graph, features: Var) -> Result<Var> {
        let w = params.bind(g, self.cr_w);
        let b = params.bind(g, self.cr_b);
        let x = g.matmul(features, w)?;
        let x = g.add_row(x, b)?;
        Ok(g.relu(x))
    }

    /// `r_t` for every token of a sentence (`T x r_dim`).
    pub fn embed_sequence<S: AsRef<str>>(&self, words: &[S]) -> Result<Tensor> {
        self.embed_ids(&self.encode(words))
    }

    pub fn embed_ids(&self, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let f = self.lm_features(&mut g, ids, None)?;
        let r = self.represent(&mut g, f)?;
        Ok(g.value(r).clone())
    }

    /// Checksum over both LMs' weights.
    pub fn lm_checksum(&self) -> (u64, u64) {
        (self.fwd.params.checksum(), self.bwd.params.checksum())
    }

    /// Remove every layer whose mask component is 0. Masks must be binary.
    pub fn delete_pruned_layers(&self) -> Result<ContextEmbedder> {
        for (name, m) in [("forward", &self.fwd_mask), ("backward", &self.bwd_mask)] {
            if !m.is_binary() {
                return Err(Error::Contract(format!(
                    "{name} mask {:?} is not binary; round it before deleting layers",
                    m.z
                )));
            }
        }
        let kf: Vec<bool> = self.fwd_mask.z.iter().map(|&z| z == 1.0).collect();
        let kb: Vec<bool> = self.bwd_mask.z.iter().map(|&z| z == 1.0).collect();
        let fwd = self.fwd.delete_layers(&kf)?;
        let bwd = self.bwd.delete_layers(&kb)?;
        let df = self.fwd.stack.output_dim();
        let mut rows = self.fwd.stack.surviving_columns(&kf);
        rows.extend(self.bwd.stack.surviving_columns(&kb).into_iter().map(|c| c + df));
        let mut params = ParamSet::new();
        params.trainable = self.params.trainable;
        let cr_w = params.add("cr.w", self.params.get(self.cr_w).select_rows(&rows));
        let cr_b = params.add("cr.b", self.params.get(self.cr_b).clone());
        Ok(ContextEmbedder {
            vocab: self.vocab.clone(),
            fwd_mask: LayerMask::ones(fwd.stack.num_layers()),
            bwd_mask: LayerMask::ones(bwd.stack.num_layers()),
            fwd,
            bwd,
            tie_masks: self.tie_masks,
            params,
            cr_w,
            cr_b,
            r_dim: self.r_dim,
        })
    }
}
