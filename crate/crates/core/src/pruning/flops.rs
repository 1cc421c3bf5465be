//! Multiply-add counts per word-level input.
//!
//! An LSTM step costs `4h(d_in + h + 1)`, a linear map `d -> k` costs
//! `k(d + 1)`, character-level costs are scaled by the average number of
//! characters per word, and embedding lookups are free. The CRF is not
//! counted.

use std::fmt;

use crate::embedder::ContextEmbedder;
use crate::lm::LmModel;
use crate::recurrent::DenseStack;
use crate::tagger::Tagger;

pub const DEFAULT_CHARS_PER_WORD: f64 = 4.39;

pub fn lstm_macs(d_in: usize, hidden: usize) -> u64 {
    4 * hidden as u64 * (d_in + hidden + 1) as u64
}

pub fn linear_macs(d: usize, k: usize) -> u64 {
    k as u64 * (d as u64 + 1)
}

/// Layer input widths of a dense stack, with original layer indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackShape {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layer_ids: Vec<usize>,
}

impl StackShape {
    pub fn dense(embed_dim: usize, hidden_dim: usize, layers: usize) -> Self {
        StackShape {
            embed_dim,
            hidden_dim,
            layer_ids: (0..layers).collect(),
        }
    }

    pub fn of(stack: &DenseStack) -> Self {
        StackShape {
            embed_dim: stack.embed_dim,
            hidden_dim: stack.hidden_dim,
            layer_ids: stack.layer_ids.clone(),
        }
    }

    /// Shape after physically removing the layers with `keep == false`.
    pub fn after_deletion(&self, keep: &[bool]) -> Self {
        StackShape {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            layer_ids: self
                .layer_ids
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&id, _)| id)
                .collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.layer_ids.len()
    }

    pub fn output_dim(&self) -> usize {
        self.embed_dim + self.layers() * self.hidden_dim
    }

    /// Input width of the `k`-th surviving layer.
    pub fn input_dim(&self, k: usize) -> usize {
        self.embed_dim + k * self.hidden_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaggerShape {
    pub char_embed: usize,
    pub char_hidden: usize,
    pub word_dim: usize,
    pub word_hidden: usize,
    pub labels: usize,
}

/// Everything the estimator needs; any part may be absent.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelShape {
    pub fwd: Option<StackShape>,
    pub bwd: Option<StackShape>,
    /// `(proj_dim, vocab)` of an LM head, counted only for LM checkpoints.
    pub lm_head: Option<(usize, usize)>,
    /// Width of `r_t` when contextual features are used.
    pub r_dim: Option<usize>,
    pub tagger: Option<TaggerShape>,
    pub chars_per_word: f64,
}

impl ModelShape {
    pub fn of_lm(lm: &LmModel) -> Self {
        ModelShape {
            fwd: Some(StackShape::of(&lm.stack)),
            bwd: None,
            lm_head: Some((lm.head.proj_dim, lm.vocab_size)),
            r_dim: None,
            tagger: None,
            chars_per_word: DEFAULT_CHARS_PER_WORD,
        }
    }

    pub fn of_tagger(t: &Tagger, chars_per_word: f64) -> Self {
        let e: Option<&ContextEmbedder> = t.embedder.as_ref();
        ModelShape {
            fwd: e.map(|e| StackShape::of(&e.fwd.stack)),
            bwd: e.map(|e| StackShape::of(&e.bwd.stack)),
            lm_head: None,
            r_dim: e.map(|e| e.r_dim),
            tagger: Some(TaggerShape {
                char_embed: t.dims.char_embed,
                char_hidden: t.dims.char_hidden,
                word_dim: t.dims.word_dim,
                word_hidden: t.dims.word_hidden,
                labels: t.labels.len(),
            }),
            chars_per_word,
        }
    }

    /// The contextual-representation tagger at the stated full-scale sizes:
    /// `layers` x 300 dense stacks on 300-d embeddings, 30-d char embeddings,
    /// 150-d LSTMs, 100-d words, 17 BIOES labels.
    pub fn reference_tagger(layers: usize) -> Self {
        ModelShape {
            fwd: Some(StackShape::dense(300, 300, layers)),
            bwd: Some(StackShape::dense(300, 300, layers)),
            lm_head: None,
            r_dim: Some(100),
            tagger: Some(TaggerShape {
                char_embed: 30,
                char_hidden: 150,
                word_dim: 100,
                word_hidden: 150,
                labels: 17,
            }),
            chars_per_word: DEFAULT_CHARS_PER_WORD,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopsItem {
    pub name: String,
    pub macs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopsReport {
    pub items: Vec<FlopsItem>,
}

impl FlopsReport {
    pub fn total(&self) -> f64 {
        self.items.iter().map(|i| i.macs).sum()
    }

    /// Sum over items whose name starts with `prefix`.
    pub fn part(&self, prefix: &str) -> f64 {
        self.items
            .iter()
            .filter(|i| i.name.starts_with(prefix))
            .map(|i| i.macs)
            .sum()
    }
}

impl fmt::Display for FlopsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.items {
            writeln!(f, "{:<28} {:>16.2}", i.name, i.macs)?;
        }
        write!(f, "{:<28} {:>16.2}", "total", self.total())
    }
}

fn stack_items(items: &mut Vec<FlopsItem>, name: &str, s: &StackShape) {
    for (k, id) in s.layer_ids.iter().enumerate() {
        items.push(FlopsItem {
            name: format!("{name}.layer{id}"),
            macs: lstm_macs(s.input_dim(k), s.hidden_dim) as f64,
        });
    }
}

pub fn estimate_flops(shape: &ModelShape) -> FlopsReport {
    let mut items = Vec::new();
    if let Some(s) = &shape.fwd {
        stack_items(&mut items, "lm.fwd", s);
    }
    if let Some(s) = &shape.bwd {
        stack_items(&mut items, "lm.bwd", s);
    }
    if let (Some((proj, vocab)), Some(s)) = (shape.lm_head, &shape.fwd) {
        items.push(FlopsItem {
            name: "lm.head.proj".into(),
            macs: linear_macs(s.output_dim(), proj) as f64,
        });
        items.push(FlopsItem {
            name: "lm.head.softmax".into(),
            macs: linear_macs(proj, vocab) as f64,
        });
    }
    let lm_dim: usize = [&shape.fwd, &shape.bwd].iter().filter_map(|s| s.as_ref()).map(|s| s.output_dim()).sum();
    if let Some(r) = shape.r_dim {
        items.push(FlopsItem {
            name: "repr.cr".into(),
            macs: linear_macs(lm_dim, r) as f64,
        });
    }
    if let Some(t) = shape.tagger {
        let char_step = 2 * lstm_macs(t.char_embed, t.char_hidden);
        items.push(FlopsItem {
            name: "tagger.char_lstm".into(),
            macs: char_step as f64 * shape.chars_per_word,
        });
        items.push(FlopsItem {
            name: "tagger.char_proj".into(),
            macs: linear_macs(2 * t.char_hidden, t.word_dim) as f64,
        });
        let parts = if shape.r_dim.is_some() { 3 } else { 2 };
        items.push(FlopsItem {
            name: "tagger.word_lstm".into(),
            macs: (2 * lstm_macs(parts * t.word_dim, t.word_hidden)) as f64,
        });
        items.push(FlopsItem {
            name: "tagger.emission".into(),
            macs: linear_macs(2 * t.word_hidden, t.labels) as f64,
        });
    }
    FlopsReport { items }
}
