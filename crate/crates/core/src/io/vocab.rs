//! Word vocabularies with frequency cutoff.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub min_count: usize,
}

impl Vocab {
    pub const UNK_ID: usize = 0;
    pub const BOS_ID: usize = 1;
    pub const EOS_ID: usize = 2;

    pub fn specials_only(min_count: usize) -> Self {
        Self::from_tokens(Vec::new(), min_count).expect("specials are distinct")
    }

    /// Build from an explicit ordered token list (specials are prepended).
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Self> {
        let mut all = vec![UNK.to_string(), BOS.to_string(), EOS.to_string()];
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab {
            tokens: all,
            index,
            min_count,
        })
    }

    /// Tokens occurring `min_count` times or fewer map to UNK. Order is by
    /// descending count, ties broken lexicographically.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c > min_count && t != UNK && t != BOS && t != EOS)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect(), min_count)
            .expect("counted tokens are distinct")
    }

    /// Whitespace-tokenized corpus, one sentence per line.
    pub fn build_from_file(path: &Path, min_count: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::build(text.split_whitespace(), min_count))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Sentences concatenated into one stream, each followed by EOS.
    pub fn encode_stream<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Vec<usize> {
        let mut out = Vec::new();
        for s in sentences {
            out.extend(self.encode(s));
            out.push(Self::EOS_ID);
        }
        out
    }

    /// Content hash over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex(&h.finalize())
    }
}

impl Vocab {
    /// `min_count N` on the first line, then the non-special tokens in id
    /// order, one per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("min_count {}\n", self.min_count);
        for t in &self.tokens[3..] {
            s += t;
            s.push('\n');
        }
        s
    }

    pub fn parse_text(text: &str, source: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let min_count = lines
            .next()
            .and_then(|l| l.strip_prefix("min_count "))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                path: source.display().to_string(),
                line: 1,
                msg: "expected `min_count N`".into(),
            })?;
        Self::from_tokens(lines.map(str::to_string).collect(), min_count)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Read a whitespace-tokenized corpus, one sentence per line; blank lines
/// are skipped.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect())
}
