//! Character LSTM + word BiLSTM + CRF sequence labeler.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use super::crf;
use crate::autograd::{Graph, Var};
use crate::embedder::ContextEmbedder;
use crate::error::{Error, Result};
use crate::io::vocab::Vocab;
use crate::params::{glorot, uniform, ParamId, ParamSet};
use crate::recurrent::{lstm_step, BoundLstm, LstmLayer};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaggerDims {
    pub char_embed: usize,
    pub char_hidden: usize,
    /// Word embedding width; also the width of `c*_t` and `r_t`.
    pub word_dim: usize,
    pub word_hidden: usize,
}

impl Default for TaggerDims {
    fn default() -> Self {
        TaggerDims {
            char_embed: 30,
            char_hidden: 150,
            word_dim: 100,
            word_hidden: 150,
        }
    }
}

/// Characters seen in training. Id 0 is the unknown character, id 1 the space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub const UNK_ID: usize = 0;
    pub const SPACE_ID: usize = 1;

    pub fn build<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut set = BTreeSet::new();
        for w in words {
            set.extend(w.as_ref().chars());
        }
        set.remove(&' ');
        Self::from_chars(set.into_iter().collect())
    }

    /// Ordered non-special characters.
    pub fn from_chars(chars: Vec<char>) -> Self {
        let mut all = vec!['\u{FFFD}', ' '];
        all.extend(chars.into_iter().filter(|&c| c != ' ' && c != '\u{FFFD}'));
        let index = all.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        CharVocab { chars: all, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(Self::UNK_ID)
    }

    /// Characters after the two specials, in id order.
    pub fn chars(&self) -> &[char] {
        &self.chars[2..]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    /// `O` first (when present), then the rest sorted.
    pub fn build<S: AsRef<str>>(labels: impl IntoIterator<Item = S>) -> Self {
        let set: BTreeSet<String> = labels.into_iter().map(|l| l.as_ref().to_string()).collect();
        let mut v: Vec<String> = Vec::with_capacity(set.len());
        if set.contains("O") {
            v.push("O".into());
        }
        v.extend(set.into_iter().filter(|l| l != "O"));
        Self::from_labels(v)
    }

    pub fn from_labels(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelSet { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// A sentence in model ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub words: Vec<usize>,
    pub lm_ids: Vec<usize>,
    /// `" w1 w2 ... wT "` as character ids.
    pub chars: Vec<usize>,
    /// Stream index of the space after each word (forward char LSTM).
    pub fwd_pos: Vec<usize>,
    /// Index, in the reversed stream, of the space before each word.
    pub bwd_pos: Vec<usize>,
    /// Gold labels; empty when unlabeled.
    pub labels: Vec<usize>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Where the LM features come from for one forward pass.
#[derive(Clone, Copy)]
pub enum LmInput<'a> {
    /// Run the frozen LMs under their stored masks, outside the gradient path.
    Live,
    /// Precomputed `T x D` features.
    Cached(&'a Tensor),
    /// Run the LMs inside the graph with these `(forward, backward)` gates.
    Gated(Var, Var),
}

/// Inverted-dropout masks for one sentence: one row per word for `v_t` and `u_t`.
#[derive(Clone, Debug)]
pub struct DropoutMasks {
    pub v: Vec<Tensor>,
    pub u: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Tagger {
    pub dims: TaggerDims,
    pub words: Vocab,
    pub chars: CharVocab,
    pub labels: LabelSet,
    pub params: ParamSet,
    pub char_embed: ParamId,
    pub char_fwd: LstmLayer,
    pub char_bwd: LstmLayer,
    pub char_proj_w: ParamId,
    pub char_proj_b: ParamId,
    pub word_embed: ParamId,
    pub word_fwd: LstmLayer,
    pub word_bwd: LstmLayer,
    pub emit_w: ParamId,
    pub trans: ParamId,
    /// `None` is the NoLM variant.
    pub embedder: Option<ContextEmbedder>,
}

impl Tagger {
    pub fn new(
        dims: TaggerDims,
        words: Vocab,
        chars: CharVocab,
        labels: LabelSet,
        embedder: Option<ContextEmbedder>,
        seed: u64,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("tagger needs at least one label".into()));
        }
        if let Some(e) = &embedder {
            if e.r_dim != dims.word_dim {
                return Err(Error::dim(
                    "tagger",
                    format!("r_t width {} must equal word width {}", e.r_dim, dims.word_dim),
                ));
            }
        }
        let mut r = rng::stream(seed, "init.tagger");
        let mut p = ParamSet::new();
        let scale = (3.0 / dims.char_embed as f64).sqrt();
        let char_embed = p.add("char.embed", uniform(chars.len(), dims.char_embed, scale, &mut r));
        let char_fwd = LstmLayer::new(&mut p, "char.fwd", dims.char_embed, dims.char_hidden, &mut r);
        let char_bwd = LstmLayer::new(&mut p, "char.bwd", dims.char_embed, dims.char_hidden, &mut r);
        let char_proj_w = p.add("char.proj_w", glorot(2 * dims.char_hidden, dims.word_dim, &mut r));
        let char_proj_b = p.add("char.proj_b", Tensor::zeros(1, dims.word_dim));
        let wscale = (3.0 / dims.word_dim as f64).sqrt();
        let word_embed = p.add("word.embed", uniform(words.len(), dims.word_dim, wscale, &mut r));
        let parts = if embedder.is_some() { 3 } else { 2 };
        let v_dim = parts * dims.word_dim;
        let word_fwd = LstmLayer::new(&mut p, "word.fwd", v_dim, dims.word_hidden, &mut r);
        let word_bwd = LstmLayer::new(&mut p, "word.bwd", v_dim, dims.word_hidden, &mut r);
        let emit_w = p.add("crf.emit", glorot(2 * dims.word_hidden, labels.len(), &mut r));
        let trans = p.add("crf.trans", Tensor::zeros(labels.len() + 1, labels.len() + 1));
        Ok(Tagger {
            dims,
            words,
            chars,
            labels,
            params: p,
            char_embed,
            char_fwd,
            char_bwd,
            char_proj_w,
            char_proj_b,
            word_embed,
            word_fwd,
            word_bwd,
            emit_w,
            trans,
            embedder,
        })
    }

    pub fn uses_lm(&self) -> bool {
        self.embedder.is_some()
    }

    /// Width of `v_t`.
    pub fn v_dim(&self) -> usize {
        self.word_fwd.input_dim
    }

    pub fn encode<S: AsRef<str>, L: AsRef<str>>(&self, words: &[S], labels: Option<&[L]>) -> Result<Encoded> {
        if words.is_empty() {
            return Err(Error::Empty("empty sentence".into()));
        }
        let mut chars = vec![CharVocab::SPACE_ID];
        let mut fwd_pos = Vec::with_capacity(words.len());
        let mut before = Vec::with_capacity(words.len());
        for w in words {
            before.push(chars.len() - 1);
            chars.extend(w.as_ref().chars().map(|c| self.chars.id(c)));
            fwd_pos.push(chars.len());
            chars.push(CharVocab::SPACE_ID);
        }
        let n = chars.len();
        let bwd_pos = before.iter().map(|&p| n - 1 - p).collect();
        let label_ids = match labels {
            None => Vec::new(),
            Some(ls) => {
                if ls.len() != words.len() {
                    return Err(Error::dim("encode", format!("{} labels for {} words", ls.len(), words.len())));
                }
                ls.iter()
                    .map(|l| {
                        self.labels.id(l.as_ref()).ok_or_else(|| {
                            Error::Contract(format!("label {:?} not in the tagger's label set", l.as_ref()))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(Encoded {
            words: self.words.encode(words),
            lm_ids: self.embedder.as_ref().map(|e| e.encode(words)).unwrap_or_default(),
            chars,
            fwd_pos,
            bwd_pos,
            labels: label_ids,
        })
    }

    /// Dropout masks with keep-scaling `1/(1-p)`.
    pub fn dropout_masks(&self, len: usize, p: f64, rng: &mut impl Rng) -> DropoutMasks {
        let mut draw = |width: usize| -> Tensor {
            let data = (0..width)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
                .collect();
            Tensor::from_vec(1, width, data).expect("width matches")
        };
        let v = (0..len).map(|_| draw(self.v_dim())).collect();
        let u = (0..len).map(|_| draw(2 * self.dims.word_hidden)).collect();
        DropoutMasks { v, u }
    }

    fn run_lstm(g: &mut Graph, cell: &BoundLstm, xs: &[Var]) -> Result<Vec<Var>> {
        let mut h = g.constant(Tensor::zeros(1, cell.hidden));
        let mut c = g.constant(Tensor::zeros(1, cell.hidden));
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let (nh, nc) = lstm_step(g, cell, x, h, c)?;
            h = nh;
            c = nc;
            out.push(h);
        }
        Ok(out)
    }

    /// `c*_t` per word.
    pub fn char_features(&self, tp: &ParamSet, g: &mut Graph, sent: &Encoded) -> Result<Vec<Var>> {
        if sent.is_empty() {
            return Err(Error::Empty("empty sentence".into()));
        }
        let table = tp.bind(g, self.char_embed);
        let xs: Vec<Var> = sent
            .chars
            .iter()
            .map(|&c| g.gather(table, &[c]))
            .collect::<Result<_>>()?;
        let fcell = self.char_fwd.bind(g, tp);
        let bcell = self.char_bwd.bind(g, tp);
        let fwd = Self::run_lstm(g, &fcell, &xs)?;
        let rev: Vec<Var> = xs.iter().rev().copied().collect();
        let bwd = Self::run_lstm(g, &bcell, &rev)?;
        let pw = tp.bind(g, self.char_proj_w);
        let pb = tp.bind(g, self.char_proj_b);
        let mut out = Vec::with_capacity(sent.len());
        for t in 0..sent.len() {
            let c = g.concat(&[fwd[sent.fwd_pos[t]], bwd[sent.bwd_pos[t]]])?;
            let p = g.matmul(c, pw)?;
            out.push(g.add_row(p, pb)?);
        }
        Ok(out)
    }

    /// Emission scores `T x Y`. `ep` holds `W_cr`/`b_cr` when an LM is used.
    pub fn emissions_with(
        &self,
        tp: &ParamSet,
        ep: Option<&ParamSet>,
        g: &mut Graph,
        sent: &Encoded,
        lm: LmInput<'_>,
        dropout: Option<&DropoutMasks>,
    ) -> Result<Var> {
        let cstar = self.char_features(tp, g, sent)?;
        let table = tp.bind(g, self.word_embed);
        let r_rows = match (&self.embedder, ep) {
            (Some(e), Some(ep)) => {
                let feats: Vec<Var> = match lm {
                    LmInput::Cached(f) => {
                        if f.rows() != sent.len() || f.cols() != e.feature_dim() {
                            return Err(Error::dim(
                                "emissions",
                                format!("cached features {:?} for {} words", f.shape(), sent.len()),
                            ));
                        }
                        (0..f.rows()).map(|t| g.constant(Tensor::row(f.row_slice(t)))).collect()
                    }
                    LmInput::Live => e.lm_feature_rows(g, &sent.lm_ids, None)?,
                    LmInput::Gated(zf, zb) => e.lm_feature_rows(g, &sent.lm_ids, Some((zf, zb)))?,
                };
                let mut rs = Vec::with_capacity(feats.len());
                for f in feats {
                    rs.push(e.represent_with(ep, g, f)?);
                }
                Some(rs)
            }
            (Some(_), None) => return Err(Error::Contract("LM tagger run without W_cr parameters".into())),
            (None, _) => None,
        };
        let fcell = self.word_fwd.bind(g, tp);
        let bcell = self.word_bwd.bind(g, tp);
        let mut vs = Vec::with_capacity(sent.len());
        for t in 0..sent.len() {
            let w = g.gather(table, &[sent.words[t]])?;
            let mut parts = vec![cstar[t]];
            if let Some(rs) = &r_rows {
                parts.push(rs[t]);
            }
            parts.push(w);
            let mut v = g.concat(&parts)?;
            if let Some(d) = dropout {
                v = g.mask(v, d.v[t].clone())?;
            }
            vs.push(v);
        }
        let fwd = Self::run_lstm(g, &fcell, &vs)?;
        let rev: Vec<Var> = vs.iter().rev().copied().collect();
        let mut bwd = Self::run_lstm(g, &bcell, &rev)?;
        bwd.reverse();
        let mut us = Vec::with_capacity(sent.len());
        for t in 0..sent.len() {
            let mut u = g.concat(&[fwd[t], bwd[t]])?;
            if let Some(d) = dropout {
                u = g.mask(u, d.u[t].clone())?;
            }
            us.push(u);
        }
        let u = g.concat_rows(&us)?;
        let wy = tp.bind(g, self.emit_w);
        g.matmul(u, wy)
    }

    pub fn emissions(&self, g: &mut Graph, sent: &Encoded, lm: LmInput<'_>, dropout: Option<&DropoutMasks>) -> Result<Var> {
        let ep = self.embedder.as_ref().map(|e| &e.params);
        self.emissions_with(&self.params, ep, g, sent, lm, dropout)
    }

    /// Sentence NLL under explicit parameter sets.
    pub fn nll_with(
        &self,
        tp: &ParamSet,
        ep: Option<&ParamSet>,
        g: &mut Graph,
        sent: &Encoded,
        lm: LmInput<'_>,
        dropout: Option<&DropoutMasks>,
    ) -> Result<Var> {
        if sent.labels.len() != sent.len() {
            return Err(Error::Contract("training sentence without gold labels".into()));
        }
        let e = self.emissions_with(tp, ep, g, sent, lm, dropout)?;
        let tr = tp.bind(g, self.trans);
        crf::crf_nll(g, e, tr, &sent.labels)
    }

    pub fn nll(&self, g: &mut Graph, sent: &Encoded, lm: LmInput<'_>, dropout: Option<&DropoutMasks>) -> Result<Var> {
        let ep = self.embedder.as_ref().map(|e| &e.params);
        self.nll_with(&self.params, ep, g, sent, lm, dropout)
    }

    /// Emission matrix and transition matrix as plain tensors (no dropout).
    pub fn scores(&self, sent: &Encoded, lm: LmInput<'_>) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let e = self.emissions(&mut g, sent, lm, None)?;
        Ok((g.value(e).clone(), self.params.get(self.trans).clone()))
    }

    /// Viterbi label ids and the path score.
    pub fn decode(&self, sent: &Encoded, lm: LmInput<'_>) -> Result<(Vec<usize>, f64)> {
        let (e, t) = self.scores(sent, lm)?;
        crf::viterbi(&e, &t)
    }

    pub fn predict<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<String>> {
        let sent = self.encode::<S, &str>(words, None)?;
        let (path, _) = self.decode(&sent, LmInput::Live)?;
        Ok(path.iter().map(|&l| self.labels.name(l).to_string()).collect())
    }
}
