//! Column-format labeled data: one token per line, whitespace-separated
//! columns, word first and label last, blank lines between sentences.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tagger::bioes::to_bioes;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub labels: Vec<String>,
    /// Columns between word and label (POS, chunk tags, ...), kept for output.
    pub extra: Vec<Vec<String>>,
}

impl TaggedSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

fn is_docstart(line: &str) -> bool {
    line.split_whitespace().next() == Some("-DOCSTART-")
}

/// Parse column text; `source` names the input in error messages.
pub fn parse_conll(text: &str, source: &Path, bioes: bool) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    let mut cur = TaggedSentence {
        words: Vec::new(),
        labels: Vec::new(),
        extra: Vec::new(),
    };
    let mut flush = |cur: &mut TaggedSentence| {
        if !cur.is_empty() {
            if bioes {
                cur.labels = to_bioes(&cur.labels);
            }
            out.push(std::mem::replace(
                cur,
                TaggedSentence {
                    words: Vec::new(),
                    labels: Vec::new(),
                    extra: Vec::new(),
                },
            ));
        }
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut cur);
            continue;
        }
        if is_docstart(line) {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(Error::Parse {
                path: source.display().to_string(),
                line: i + 1,
                msg: format!("expected at least 2 columns, found {}", cols.len()),
            });
        }
        cur.words.push(cols[0].to_string());
        cur.labels.push(cols[cols.len() - 1].to_string());
        cur.extra.push(cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect());
    }
    flush(&mut cur);
    Ok(out)
}

/// Read a column file, skipping `-DOCSTART-` lines. With `bioes`, BIO labels
/// are rewritten to BIOES.
pub fn read_conll(path: &Path, bioes: bool) -> Result<Vec<TaggedSentence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, path, bioes)
}

/// Single-space separated columns, one blank line after each sentence.
pub fn write_conll(sentences: &[TaggedSentence]) -> String {
    let mut s = String::new();
    for sent in sentences {
        for i in 0..sent.len() {
            s += &sent.words[i];
            for c in sent.extra.get(i).into_iter().flatten() {
                s.push(' ');
                s += c;
            }
            s.push(' ');
            s += &sent.labels[i];
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

/// Input columns plus a final predicted-label column.
pub fn write_predictions(sentences: &[TaggedSentence], predicted: &[Vec<String>]) -> Result<String> {
    if sentences.len() != predicted.len() {
        return Err(Error::dim("write_predictions", "one prediction per sentence"));
    }
    let mut rows = Vec::with_capacity(sentences.len());
    for (s, p) in sentences.iter().zip(predicted) {
        if s.len() != p.len() {
            return Err(Error::dim("write_predictions", format!("{} labels for {} words", p.len(), s.len())));
        }
        let mut extra = s.extra.clone();
        extra.resize(s.len(), Vec::new());
        for (e, l) in extra.iter_mut().zip(&s.labels) {
            e.push(l.clone());
        }
        rows.push(TaggedSentence {
            words: s.words.clone(),
            labels: p.clone(),
            extra,
        });
    }
    Ok(write_conll(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<TaggedSentence>> {
        parse_conll(text, Path::new("mem"), false)
    }

    #[test]
    fn two_lines_make_one_sentence() {
        let s = parse("EU B-ORG\nrejects O\n\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].words, vec!["EU", "rejects"]);
        assert_eq!(s[0].labels, vec!["B-ORG", "O"]);
    }

    #[test]
    fn docstart_is_skipped() {
        let s = parse("-DOCSTART- -X- -X- O\n\nPeter NNP B-NP B-PER\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].extra[0], vec!["NNP", "B-NP"]);
    }

    #[test]
    fn short_line_reports_its_number() {
        match parse("a O\n\nlonely\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip_modulo_whitespace() {
        let text = "EU  NNP B-ORG\nrejects\tVBZ O\n\n\nPeter NNP B-PER\n";
        let norm = "EU NNP B-ORG\nrejects VBZ O\n\nPeter NNP B-PER\n\n";
        let s = parse(text).unwrap();
        assert_eq!(write_conll(&s), norm);
        assert_eq!(parse(&write_conll(&s)).unwrap(), s);
    }

    #[test]
    fn bio_input_becomes_bioes() {
        let s = parse_conll("New B-LOC\nYork I-LOC\nis O\nbig B-X\n", Path::new("mem"), true).unwrap();
        assert_eq!(s[0].labels, vec!["B-LOC", "E-LOC", "O", "S-X"]);
    }

    #[test]
    fn predictions_append_a_column() {
        let s = parse("a O\nb S-X\n").unwrap();
        let out = write_predictions(&s, &[vec!["O".into(), "O".into()]]).unwrap();
        assert_eq!(out, "a O O\nb S-X O\n\n");
        assert!(write_predictions(&s, &[vec!["O".into()]]).is_err());
    }
}
