//! Pretrained word vectors in the plain text format: one token per line
//! followed by its floats. An optional `count dim` first line is skipped.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tagger::Tagger;

#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

pub fn parse_vectors(text: &str, source: &Path) -> Result<WordVectors> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.display().to_string(),
        line,
        msg,
    };
    let mut dim = None;
    let mut vectors = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        let v = rest
            .iter()
            .map(|x| x.parse::<f64>().map_err(|_| err(i + 1, format!("bad number {x:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if v.is_empty() => return Err(err(i + 1, "token without values".into())),
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => return Err(err(i + 1, format!("{} values, expected {d}", v.len()))),
            _ => {}
        }
        vectors.insert(token.to_string(), v);
    }
    Ok(WordVectors {
        dim: dim.unwrap_or(0),
        vectors,
    })
}

pub fn read_vectors(path: &Path) -> Result<WordVectors> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vectors(&text, path)
}

/// Copy vectors into the tagger's word embedding rows, trying the exact
/// token first and then its lowercase form. Returns the number of rows set.
pub fn apply_vectors(tagger: &mut Tagger, wv: &WordVectors) -> Result<usize> {
    if wv.vectors.is_empty() {
        return Ok(0);
    }
    if wv.dim != tagger.dims.word_dim {
        return Err(Error::dim(
            "apply_vectors",
            format!("vectors have {} dims, tagger words have {}", wv.dim, tagger.dims.word_dim),
        ));
    }
    let id = tagger.word_embed;
    let mut n = 0;
    let tokens: Vec<String> = tagger.words.tokens().to_vec();
    let emb = tagger.params.get_mut(id);
    for (row, tok) in tokens.iter().enumerate() {
        let hit = wv.vectors.get(tok).or_else(|| wv.vectors.get(&tok.to_lowercase()));
        if let Some(v) = hit {
            emb.row_slice_mut(row).copy_from_slice(v);
            n += 1;
        }
    }
    Ok(n)
}
