//! Flat `key = value` run configuration. Every field has a default; lines
//! starting with `#` are comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lm::{LmDims, LmTrainConfig};
use crate::pruning::{PruneConfig, RegKind, RegularizerSpec};
use crate::tagger::{TaggerDims, TaggerTrainConfig};

/// Relative data paths are resolved against this directory when set.
pub const DATA_ENV: &str = "LMPRUNE_DATA";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub min_count: usize,
    pub bioes: bool,

    pub lm_embed_dim: usize,
    pub lm_hidden_dim: usize,
    pub lm_layers: usize,
    pub lm_proj_dim: usize,
    pub lm_unroll: usize,
    pub lm_batch: usize,
    pub lm_lr: f64,
    pub lm_clip: f64,
    pub lm_layer_dropout: f64,
    pub lm_epochs: usize,

    pub char_embed: usize,
    pub char_hidden: usize,
    pub word_dim: usize,
    pub word_hidden: usize,
    pub tie_masks: bool,

    pub batch: usize,
    pub momentum: f64,
    pub lr0: f64,
    pub decay: f64,
    pub clip: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub patience: usize,

    pub regularizer: RegKind,
    pub lambda0: f64,
    pub lambda1: usize,
    pub prune_epochs: usize,
    pub prune_max_steps: Option<usize>,
    pub chars_per_word: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            min_count: 3,
            bioes: true,
            lm_embed_dim: 300,
            lm_hidden_dim: 300,
            lm_layers: 10,
            lm_proj_dim: 300,
            lm_unroll: 20,
            lm_batch: 128,
            lm_lr: 0.001,
            lm_clip: 5.0,
            lm_layer_dropout: 0.5,
            lm_epochs: 10,
            char_embed: 30,
            char_hidden: 150,
            word_dim: 100,
            word_hidden: 150,
            tie_masks: false,
            batch: 10,
            momentum: 0.9,
            lr0: 0.015,
            decay: 0.05,
            clip: 5.0,
            dropout: 0.5,
            epochs: 100,
            patience: 10,
            regularizer: RegKind::R3,
            lambda0: 0.05,
            lambda1: 2,
            prune_epochs: 10,
            prune_max_steps: None,
            chars_per_word: crate::pruning::flops::DEFAULT_CHARS_PER_WORD,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

impl RunConfig {
    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "min_count" => self.min_count = parse(key, v)?,
            "bioes" => self.bioes = parse(key, v)?,
            "lm_embed_dim" => self.lm_embed_dim = parse(key, v)?,
            "lm_hidden_dim" => self.lm_hidden_dim = parse(key, v)?,
            "lm_layers" => self.lm_layers = parse(key, v)?,
            "lm_proj_dim" => self.lm_proj_dim = parse(key, v)?,
            "lm_unroll" => self.lm_unroll = parse(key, v)?,
            "lm_batch" => self.lm_batch = parse(key, v)?,
            "lm_lr" => self.lm_lr = parse(key, v)?,
            "lm_clip" => self.lm_clip = parse(key, v)?,
            "lm_layer_dropout" => self.lm_layer_dropout = parse(key, v)?,
            "lm_epochs" => self.lm_epochs = parse(key, v)?,
            "char_embed" => self.char_embed = parse(key, v)?,
            "char_hidden" => self.char_hidden = parse(key, v)?,
            "word_dim" => self.word_dim = parse(key, v)?,
            "word_hidden" => self.word_hidden = parse(key, v)?,
            "tie_masks" => self.tie_masks = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "lr0" => self.lr0 = parse(key, v)?,
            "decay" => self.decay = parse(key, v)?,
            "clip" => self.clip = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "regularizer" => self.regularizer = v.parse()?,
            "lambda0" => self.lambda0 = parse(key, v)?,
            "lambda1" => self.lambda1 = parse(key, v)?,
            "prune_epochs" => self.prune_epochs = parse(key, v)?,
            "prune_max_steps" => {
                self.prune_max_steps = match v {
                    "none" | "" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "chars_per_word" => self.chars_per_word = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Every field, one per line, in a fixed order. `parse_str` inverts it.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("min_count", self.min_count.to_string());
        kv("bioes", self.bioes.to_string());
        kv("lm_embed_dim", self.lm_embed_dim.to_string());
        kv("lm_hidden_dim", self.lm_hidden_dim.to_string());
        kv("lm_layers", self.lm_layers.to_string());
        kv("lm_proj_dim", self.lm_proj_dim.to_string());
        kv("lm_unroll", self.lm_unroll.to_string());
        kv("lm_batch", self.lm_batch.to_string());
        kv("lm_lr", self.lm_lr.to_string());
        kv("lm_clip", self.lm_clip.to_string());
        kv("lm_layer_dropout", self.lm_layer_dropout.to_string());
        kv("lm_epochs", self.lm_epochs.to_string());
        kv("char_embed", self.char_embed.to_string());
        kv("char_hidden", self.char_hidden.to_string());
        kv("word_dim", self.word_dim.to_string());
        kv("word_hidden", self.word_hidden.to_string());
        kv("tie_masks", self.tie_masks.to_string());
        kv("batch", self.batch.to_string());
        kv("momentum", self.momentum.to_string());
        kv("lr0", self.lr0.to_string());
        kv("decay", self.decay.to_string());
        kv("clip", self.clip.to_string());
        kv("dropout", self.dropout.to_string());
        kv("epochs", self.epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("regularizer", self.regularizer.to_string());
        kv("lambda0", self.lambda0.to_string());
        kv("lambda1", self.lambda1.to_string());
        kv("prune_epochs", self.prune_epochs.to_string());
        kv(
            "prune_max_steps",
            self.prune_max_steps.map_or("none".into(), |n| n.to_string()),
        );
        kv("chars_per_word", self.chars_per_word.to_string());
        s
    }

    pub fn lm_dims(&self, vocab_size: usize) -> LmDims {
        LmDims {
            vocab_size,
            embed_dim: self.lm_embed_dim,
            hidden_dim: self.lm_hidden_dim,
            layers: self.lm_layers,
            proj_dim: self.lm_proj_dim,
        }
    }

    pub fn lm_train(&self) -> LmTrainConfig {
        LmTrainConfig {
            unroll: self.lm_unroll,
            batch: self.lm_batch,
            lr: self.lm_lr,
            clip: self.lm_clip,
            layer_dropout: self.lm_layer_dropout,
            epochs: self.lm_epochs,
            seed: self.seed,
            ..LmTrainConfig::default()
        }
    }

    pub fn tagger_dims(&self) -> TaggerDims {
        TaggerDims {
            char_embed: self.char_embed,
            char_hidden: self.char_hidden,
            word_dim: self.word_dim,
            word_hidden: self.word_hidden,
        }
    }

    pub fn tagger_train(&self) -> TaggerTrainConfig {
        TaggerTrainConfig {
            batch: self.batch,
            lr0: self.lr0,
            decay: self.decay,
            momentum: self.momentum,
            clip: self.clip,
            dropout: self.dropout,
            epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn regularizer_spec(&self) -> RegularizerSpec {
        RegularizerSpec {
            kind: self.regularizer,
            lambda0: self.lambda0,
            lambda1: self.lambda1,
        }
    }

    pub fn prune(&self) -> PruneConfig {
        let mut p = PruneConfig::new(self.regularizer_spec(), self.tagger_train());
        p.epochs = self.prune_epochs;
        p.max_steps = self.prune_max_steps;
        p.chars_per_word = self.chars_per_word;
        p
    }
}

/// Resolve a relative path against `$LMPRUNE_DATA` when that is set.
pub fn data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_ENV) {
        Some(root) if p.is_relative() && !p.exists() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}
