//! BIO / BIOES label handling and chunk extraction.

/// Split a label into its prefix character and entity type.
fn split(label: &str) -> (char, &str) {
    if label == "O" {
        return ('O', "");
    }
    match label.split_once('-') {
        Some((p, t)) if p.len() == 1 => (p.chars().next().unwrap_or('O'), t),
        _ => ('O', ""),
    }
}

/// Convert BIO or IOB1 labels to BIOES. A stray `I-` that does not continue
/// a span of the same type starts a new span, as if it were `B-`.
pub fn to_bioes<S: AsRef<str>>(labels: &[S]) -> Vec<String> {
    let spans = chunks(labels);
    let mut out = vec!["O".to_string(); labels.len()];
    for c in spans {
        if c.start == c.end {
            out[c.start] = format!("S-{}", c.kind);
        } else {
            out[c.start] = format!("B-{}", c.kind);
            for o in out.iter_mut().take(c.end).skip(c.start + 1) {
                *o = format!("I-{}", c.kind);
            }
            out[c.end] = format!("E-{}", c.kind);
        }
    }
    out
}

/// Strict BIOES well-formedness.
pub fn is_valid_bioes<S: AsRef<str>>(labels: &[S]) -> bool {
    let mut open: Option<&str> = None;
    for l in labels {
        let l = l.as_ref();
        if l != "O" && !matches!(split(l).0, 'B' | 'I' | 'E' | 'S') {
            return false;
        }
        let (p, t) = split(l);
        match (p, open) {
            ('O' | 'B' | 'S', Some(_)) => return false,
            ('I' | 'E', None) => return false,
            ('I' | 'E', Some(o)) if o != t => return false,
            ('B', None) => open = Some(t),
            ('E', Some(_)) => open = None,
            _ => {}
        }
    }
    open.is_none()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Chunk {
    pub kind: String,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

/// Spans under lenient BIO/BIOES reading: `B`/`S` always open a span, `I`/`E`
/// continue an open span of the same type or open a new one otherwise.
pub fn chunks<S: AsRef<str>>(labels: &[S]) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut open: Option<(String, usize)> = None;
    let close = |open: &mut Option<(String, usize)>, end: usize, out: &mut Vec<Chunk>| {
        if let Some((kind, start)) = open.take() {
            out.push(Chunk { kind, start, end });
        }
    };
    for (i, l) in labels.iter().enumerate() {
        let (p, t) = split(l.as_ref());
        let continues = matches!(&open, Some((k, _)) if k == t);
        match p {
            'B' => {
                close(&mut open, i.wrapping_sub(1), &mut out);
                open = Some((t.to_string(), i));
            }
            'S' => {
                close(&mut open, i.wrapping_sub(1), &mut out);
                out.push(Chunk {
                    kind: t.to_string(),
                    start: i,
                    end: i,
                });
            }
            'I' if continues => {}
            'I' => {
                close(&mut open, i.wrapping_sub(1), &mut out);
                open = Some((t.to_string(), i));
            }
            'E' if continues => close(&mut open, i, &mut out),
            'E' => {
                close(&mut open, i.wrapping_sub(1), &mut out);
                out.push(Chunk {
                    kind: t.to_string(),
                    start: i,
                    end: i,
                });
            }
            _ => close(&mut open, i.wrapping_sub(1), &mut out),
        }
    }
    close(&mut open, labels.len().wrapping_sub(1), &mut out);
    out
}
