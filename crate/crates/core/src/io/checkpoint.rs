//! Single-file checkpoints: a line-oriented text header followed by a
//! little-endian `f32` body holding every tensor row-major, in header order.
//!
//! ```text
//! lmprune-checkpoint 1
//! meta kind tagger
//! list tagger.labels 3
//! O
//! ...
//! tensor tagger/char.embed 40 30
//! body-sha256 <hex>
//! end
//! <body>
//! ```

use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::vocab::{hex, Vocab};
use crate::embedder::ContextEmbedder;
use crate::error::{Error, Result};
use crate::lm::{Direction, LmDims, LmModel};
use crate::params::ParamSet;
use crate::recurrent::LayerMask;
use crate::tagger::model::{CharVocab, LabelSet, Tagger, TaggerDims};
use crate::tensor::Tensor;

const MAGIC: &str = "lmprune-checkpoint";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Untyped checkpoint contents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCheckpoint {
    pub meta: Vec<(String, String)>,
    pub lists: Vec<(String, Vec<String>)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl RawCheckpoint {
    pub fn put(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn put_list(&mut self, name: &str, items: Vec<String>) {
        self.lists.push((name.to_string(), items));
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| bad(format!("missing header field {key:?}")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse().map_err(|_| bad(format!("bad value {v:?} for {key:?}")))
    }

    pub fn list(&self, name: &str) -> Result<&[String]> {
        self.lists
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| bad(format!("missing list {name:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, t)| t)
            .ok_or_else(|| bad(format!("missing tensor {name:?}")))
    }

    fn body(&self) -> Vec<u8> {
        let n: usize = self.tensors.iter().map(|(_, t)| t.data().len()).sum();
        let mut out = Vec::with_capacity(4 * n);
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let field = |s: &str| -> Result<()> {
            if s.is_empty() || s.contains(char::is_whitespace) {
                return Err(bad(format!("header name {s:?} must be non-empty without whitespace")));
            }
            Ok(())
        };
        let mut h = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            field(k)?;
            if v.contains('\n') {
                return Err(bad(format!("header value for {k:?} contains a newline")));
            }
            h += &format!("meta {k} {v}\n");
        }
        for (name, items) in &self.lists {
            field(name)?;
            h += &format!("list {name} {}\n", items.len());
            for it in items {
                if it.contains('\n') || it.contains('\r') {
                    return Err(bad(format!("list item {it:?} contains a line break")));
                }
                h += it;
                h.push('\n');
            }
        }
        for (name, t) in &self.tensors {
            field(name)?;
            h += &format!("tensor {name} {} {}\n", t.rows(), t.cols());
        }
        let body = self.body();
        h += &format!("body-sha256 {}\nend\n", hex(&Sha256::digest(&body)));
        let mut out = h.into_bytes();
        out.extend(body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
        };
        let first = next_line()?;
        if first != format!("{MAGIC} {VERSION}") {
            return Err(bad(format!("not a version-{VERSION} checkpoint (first line {first:?})")));
        }
        let mut raw = RawCheckpoint::default();
        let mut shapes = Vec::new();
        let mut digest = None;
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let (tag, rest) = line.split_once(' ').ok_or_else(|| bad(format!("bad header line {line:?}")))?;
            match tag {
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    raw.meta.push((k.to_string(), v.to_string()));
                }
                "list" => {
                    let (name, n) = rest.split_once(' ').ok_or_else(|| bad(format!("bad list line {line:?}")))?;
                    let n: usize = n.parse().map_err(|_| bad(format!("bad list length in {line:?}")))?;
                    let mut items = Vec::with_capacity(n);
                    for _ in 0..n {
                        items.push(next_line()?.to_string());
                    }
                    raw.lists.push((name.to_string(), items));
                }
                "tensor" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    let dims = (parts.len() == 3)
                        .then(|| Some((parts[1].parse::<usize>().ok()?, parts[2].parse::<usize>().ok()?)))
                        .flatten()
                        .ok_or_else(|| bad(format!("bad tensor line {line:?}")))?;
                    shapes.push((parts[0].to_string(), dims));
                }
                "body-sha256" => digest = Some(rest.to_string()),
                _ => return Err(bad(format!("unknown header tag {tag:?}"))),
            }
        }
        let body = &bytes[pos..];
        let want: usize = shapes.iter().map(|(_, (r, c))| 4 * r * c).sum();
        if body.len() != want {
            return Err(bad(format!("body has {} bytes, header declares {want}", body.len())));
        }
        if digest.as_deref() != Some(hex(&Sha256::digest(body)).as_str()) {
            return Err(bad("body checksum mismatch"));
        }
        let mut off = 0;
        for (name, (r, c)) in shapes {
            let data = body[off..off + 4 * r * c]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            off += 4 * r * c;
            raw.tensors.push((name, Tensor::from_vec(r, c, data)?));
        }
        Ok(raw)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn put_set(&mut self, prefix: &str, set: &ParamSet) {
        for p in set.iter() {
            self.tensors.push((format!("{prefix}/{}", p.name), p.value.clone()));
        }
    }

    /// Overwrite every parameter of `set` from `prefix/<name>` tensors.
    fn fill_set(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        let stored = self.tensors.iter().filter(|(k, _)| k.starts_with(&format!("{prefix}/"))).count();
        if stored != set.len() {
            return Err(bad(format!("{prefix}: {stored} stored tensors for {} parameters", set.len())));
        }
        for i in 0..set.len() {
            let id = crate::params::ParamId(i);
            let t = self.tensor(&format!("{prefix}/{}", set.name(id)))?;
            if t.shape() != set.get(id).shape() {
                return Err(bad(format!(
                    "{prefix}/{}: stored shape {:?}, model expects {:?}",
                    set.name(id),
                    t.shape(),
                    set.get(id).shape()
                )));
            }
            set.set(id, t.clone());
        }
        Ok(())
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn split<T: FromStr>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.parse().map_err(|_| bad(format!("bad list element {x:?}"))))
        .collect()
}

fn put_vocab(raw: &mut RawCheckpoint, name: &str, v: &Vocab) {
    raw.put(&format!("{name}.min_count"), v.min_count);
    raw.put(&format!("{name}.hash"), v.hash());
    raw.put_list(name, v.tokens()[3..].to_vec());
}

fn get_vocab(raw: &RawCheckpoint, name: &str) -> Result<Vocab> {
    let v = Vocab::from_tokens(raw.list(name)?.to_vec(), raw.parse(&format!("{name}.min_count"))?)?;
    if v.hash() != raw.meta(&format!("{name}.hash"))? {
        return Err(bad(format!("{name}: vocabulary hash mismatch")));
    }
    Ok(v)
}

fn put_lm(raw: &mut RawCheckpoint, prefix: &str, lm: &LmModel) {
    let d = lm.dims();
    raw.put(&format!("{prefix}.direction"), lm.direction);
    raw.put(&format!("{prefix}.vocab_size"), d.vocab_size);
    raw.put(&format!("{prefix}.embed_dim"), d.embed_dim);
    raw.put(&format!("{prefix}.hidden_dim"), d.hidden_dim);
    raw.put(&format!("{prefix}.layers"), d.layers);
    raw.put(&format!("{prefix}.proj_dim"), d.proj_dim);
    raw.put(&format!("{prefix}.layer_manifest"), join(&lm.stack.layer_ids));
    raw.put_set(prefix, &lm.params);
}

fn get_lm(raw: &RawCheckpoint, prefix: &str) -> Result<LmModel> {
    let f = |k: &str| raw.parse::<usize>(&format!("{prefix}.{k}"));
    let dims = LmDims {
        vocab_size: f("vocab_size")?,
        embed_dim: f("embed_dim")?,
        hidden_dim: f("hidden_dim")?,
        layers: f("layers")?,
        proj_dim: f("proj_dim")?,
    };
    let dir = raw.meta(&format!("{prefix}.direction"))?;
    let direction = Direction::parse(dir).ok_or_else(|| bad(format!("{prefix}: unknown direction {dir:?}")))?;
    let ids: Vec<usize> = split(raw.meta(&format!("{prefix}.layer_manifest"))?)?;
    if ids.len() != dims.layers {
        return Err(bad(format!("{prefix}: manifest lists {} layers, header says {}", ids.len(), dims.layers)));
    }
    let mut lm = LmModel::new(dims, direction, 0);
    lm.stack.layer_ids = ids;
    raw.fill_set(prefix, &mut lm.params)?;
    Ok(lm)
}

fn header(raw: &mut RawCheckpoint, kind: &str, seed: u64) {
    raw.put("kind", kind);
    raw.put("seed", seed);
    raw.put("gate_order", "i,f,g,o");
    raw.put("stack", "dense");
}

fn expect_kind(raw: &RawCheckpoint, kind: &str) -> Result<()> {
    let got = raw.meta("kind")?;
    if got != kind {
        return Err(bad(format!("expected a {kind} checkpoint, found {got}")));
    }
    Ok(())
}

pub fn lm_to_raw(lm: &LmModel, vocab: &Vocab, seed: u64) -> RawCheckpoint {
    let mut raw = RawCheckpoint::default();
    header(&mut raw, "lm", seed);
    put_vocab(&mut raw, "vocab", vocab);
    put_lm(&mut raw, "lm", lm);
    raw
}

pub fn lm_from_raw(raw: &RawCheckpoint) -> Result<(LmModel, Vocab, u64)> {
    expect_kind(raw, "lm")?;
    let vocab = get_vocab(raw, "vocab")?;
    let lm = get_lm(raw, "lm")?;
    if lm.vocab_size != vocab.len() {
        return Err(bad("LM output size differs from its vocabulary"));
    }
    Ok((lm, vocab, raw.parse("seed")?))
}

pub fn tagger_to_raw(t: &Tagger, seed: u64) -> RawCheckpoint {
    let mut raw = RawCheckpoint::default();
    header(&mut raw, "tagger", seed);
    raw.put("tagger.char_embed", t.dims.char_embed);
    raw.put("tagger.char_hidden", t.dims.char_hidden);
    raw.put("tagger.word_dim", t.dims.word_dim);
    raw.put("tagger.word_hidden", t.dims.word_hidden);
    put_vocab(&mut raw, "tagger.words", &t.words);
    let chars: Vec<u32> = t.chars.chars().iter().map(|&c| c as u32).collect();
    raw.put("tagger.chars", join(&chars));
    raw.put_list("tagger.labels", t.labels.labels().to_vec());
    raw.put("contextual", t.embedder.is_some());
    if let Some(e) = &t.embedder {
        raw.put("embedder.r_dim", e.r_dim);
        raw.put("embedder.tie_masks", e.tie_masks);
        raw.put("embedder.fwd_mask", join(&e.fwd_mask.z));
        raw.put("embedder.bwd_mask", join(&e.bwd_mask.z));
        put_vocab(&mut raw, "embedder.vocab", &e.vocab);
        put_lm(&mut raw, "lm.fwd", &e.fwd);
        put_lm(&mut raw, "lm.bwd", &e.bwd);
        raw.put_set("embedder", &e.params);
    }
    raw.put_set("tagger", &t.params);
    raw
}

pub fn tagger_from_raw(raw: &RawCheckpoint) -> Result<(Tagger, u64)> {
    expect_kind(raw, "tagger")?;
    let dims = TaggerDims {
        char_embed: raw.parse("tagger.char_embed")?,
        char_hidden: raw.parse("tagger.char_hidden")?,
        word_dim: raw.parse("tagger.word_dim")?,
        word_hidden: raw.parse("tagger.word_hidden")?,
    };
    let words = get_vocab(raw, "tagger.words")?;
    let chars = split::<u32>(raw.meta("tagger.chars")?)?
        .into_iter()
        .map(|c| char::from_u32(c).ok_or_else(|| bad(format!("bad code point {c}"))))
        .collect::<Result<Vec<char>>>()?;
    let chars = CharVocab::from_chars(chars);
    let labels = LabelSet::from_labels(raw.list("tagger.labels")?.to_vec());
    let embedder = if raw.parse::<bool>("contextual")? {
        let fwd = get_lm(raw, "lm.fwd")?;
        let bwd = get_lm(raw, "lm.bwd")?;
        let mut e = ContextEmbedder::new(get_vocab(raw, "embedder.vocab")?, fwd, bwd, raw.parse("embedder.r_dim")?, 0)?;
        raw.fill_set("embedder", &mut e.params)?;
        e.tie_masks = raw.parse("embedder.tie_masks")?;
        e.fwd_mask = LayerMask {
            z: split(raw.meta("embedder.fwd_mask")?)?,
        };
        e.bwd_mask = LayerMask {
            z: split(raw.meta("embedder.bwd_mask")?)?,
        };
        if e.fwd_mask.len() != e.fwd.stack.num_layers() || e.bwd_mask.len() != e.bwd.stack.num_layers() {
            return Err(bad("mask length differs from stack depth"));
        }
        Some(e)
    } else {
        None
    };
    let mut t = Tagger::new(dims, words, chars, labels, embedder, 0)?;
    raw.fill_set("tagger", &mut t.params)?;
    Ok((t, raw.parse("seed")?))
}

pub fn save_lm(path: &Path, lm: &LmModel, vocab: &Vocab, seed: u64) -> Result<()> {
    lm_to_raw(lm, vocab, seed).save(path)
}

pub fn load_lm(path: &Path) -> Result<(LmModel, Vocab, u64)> {
    lm_from_raw(&RawCheckpoint::load(path)?)
}

pub fn save_tagger(path: &Path, t: &Tagger, seed: u64) -> Result<()> {
    tagger_to_raw(t, seed).save(path)
}

pub fn load_tagger(path: &Path) -> Result<(Tagger, u64)> {
    tagger_from_raw(&RawCheckpoint::load(path)?)
}

/// Either kind of model, as found in a checkpoint file.
pub enum Loaded {
    Lm { lm: Box<LmModel>, vocab: Vocab, seed: u64 },
    Tagger { tagger: Box<Tagger>, seed: u64 },
}

pub fn load_any(path: &Path) -> Result<Loaded> {
    let raw = RawCheckpoint::load(path)?;
    match raw.meta("kind")? {
        "lm" => {
            let (lm, vocab, seed) = lm_from_raw(&raw)?;
            Ok(Loaded::Lm {
                lm: Box::new(lm),
                vocab,
                seed,
            })
        }
        "tagger" => {
            let (t, seed) = tagger_from_raw(&raw)?;
            Ok(Loaded::Tagger {
                tagger: Box::new(t),
                seed,
            })
        }
        k => Err(bad(format!("unknown checkpoint kind {k:?}"))),
    }
}
