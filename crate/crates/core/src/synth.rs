//! Deterministic synthetic corpora and constructed models used by the
//! quantitative checks and the `synth` CLI command.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::io::conll::TaggedSentence;
use crate::io::vocab::Vocab;
use crate::lm::{Direction, LmDims, LmModel};
use crate::params::uniform;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

/// `n` distinct pronounceable pseudo-words of 1 to `max_syl` syllables.
pub fn pseudo_words(r: &mut Stream, n: usize, max_syl: usize, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syl = r.gen_range(1..=max_syl);
        let w: String = (0..syl)
            .map(|_| format!("{}{}", ONSETS[r.gen_range(0..ONSETS.len())], VOWELS[r.gen_range(0..VOWELS.len())]))
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Fixed-length pseudo-words, so spelling length carries no information.
fn fixed_words(r: &mut Stream, n: usize, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = [C, V, C, V]
            .iter()
            .map(|set| set[r.gen_range(0..set.len())] as char)
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Zipf-distributed index in `0..n`.
struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=n)
            .map(|k| {
                acc += 1.0 / (k as f64).powf(s);
                acc
            })
            .collect();
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Zipf { cdf }
    }

    fn sample(&self, r: &mut Stream) -> usize {
        let u: f64 = r.gen();
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }
}

struct Lexicon {
    words: Vec<String>,
    zipf: Zipf,
}

impl Lexicon {
    fn new(words: Vec<String>) -> Self {
        let zipf = Zipf::new(words.len(), 1.0);
        Lexicon { words, zipf }
    }

    fn pick(&self, r: &mut Stream) -> &str {
        &self.words[self.zipf.sample(r)]
    }

    /// Zipf pick restricted to one of `k` interleaved topic slices.
    fn pick_topic(&self, r: &mut Stream, topic: usize, k: usize) -> &str {
        loop {
            let i = self.zipf.sample(r);
            if i % k == topic || r.gen_bool(0.15) {
                return &self.words[i];
            }
        }
    }
}

/// Grammar-generated English-like text, one sentence per element, of about
/// `target_bytes` bytes. Nouns and verbs agree in number, documents keep a
/// topic that biases noun choice, and all word frequencies are Zipfian.
pub fn lm_corpus(seed: u64, target_bytes: usize) -> Vec<Vec<String>> {
    let mut r = rng::stream(seed, "synth.lm");
    let mut taken = std::collections::HashSet::new();
    let mut lex = |n: usize, syl: usize, r: &mut Stream| Lexicon::new(pseudo_words(r, n, syl, &mut taken));
    let nouns = lex(320, 3, &mut r);
    let verbs = lex(140, 2, &mut r);
    let adjs = lex(90, 3, &mut r);
    let advs = lex(30, 3, &mut r);
    let dets_sg = ["the", "a", "this", "every", "one"];
    let dets_pl = ["the", "some", "these", "many", "two"];
    let preps = ["in", "on", "with", "from", "under", "near", "for", "about"];
    let conj = ["and", "but", "while", "because"];
    const TOPICS: usize = 6;

    let mut out = Vec::new();
    let mut bytes = 0;
    let mut topic = 0;
    while bytes < target_bytes {
        if out.len() % 12 == 0 {
            topic = r.gen_range(0..TOPICS);
        }
        let mut s: Vec<String> = Vec::new();
        let clauses = if r.gen_bool(0.25) { 2 } else { 1 };
        for c in 0..clauses {
            if c > 0 {
                s.push(conj[r.gen_range(0..conj.len())].into());
            }
            let plural = noun_phrase(&mut s, &mut r, &nouns, &adjs, &dets_sg, &dets_pl, topic, TOPICS);
            if r.gen_bool(0.2) {
                s.push(advs.pick(&mut r).into());
            }
            let v = verbs.pick(&mut r);
            s.push(if plural { v.to_string() } else { format!("{v}s") });
            match r.gen_range(0..3) {
                0 => {
                    noun_phrase(&mut s, &mut r, &nouns, &adjs, &dets_sg, &dets_pl, topic, TOPICS);
                }
                1 => {
                    s.push(preps[r.gen_range(0..preps.len())].into());
                    noun_phrase(&mut s, &mut r, &nouns, &adjs, &dets_sg, &dets_pl, topic, TOPICS);
                }
                _ => {}
            }
        }
        s.push(".".into());
        bytes += s.iter().map(|w| w.len() + 1).sum::<usize>();
        out.push(s);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn noun_phrase(
    s: &mut Vec<String>,
    r: &mut Stream,
    nouns: &Lexicon,
    adjs: &Lexicon,
    sg: &[&str],
    pl: &[&str],
    topic: usize,
    topics: usize,
) -> bool {
    let plural = r.gen_bool(0.35);
    let dets = if plural { pl } else { sg };
    s.push(dets[r.gen_range(0..dets.len())].into());
    while r.gen_bool(0.3) {
        s.push(adjs.pick(r).into());
    }
    let n = nouns.pick_topic(r, topic, topics);
    s.push(if plural { format!("{n}s") } else { n.to_string() });
    plural
}

/// Split off the last `frac` of sentences as a held-out set.
pub fn split<T: Clone>(items: &[T], frac: f64) -> (Vec<T>, Vec<T>) {
    let cut = ((1.0 - frac) * items.len() as f64).round() as usize;
    (items[..cut].to_vec(), items[cut..].to_vec())
}

/// Entity task whose labels are decided by context only.
///
/// Names are spelled alike for both classes; a name is PER or LOC according
/// to the cue words around it. The labeled train set uses one half of the
/// names and cue words, the dev set the other half, and the unlabeled LM
/// corpus uses all of them, so only a model that read the LM corpus can
/// relate held-out cues to the classes.
#[derive(Clone, Debug)]
pub struct ContextTask {
    pub lm_corpus: Vec<Vec<String>>,
    pub train: Vec<TaggedSentence>,
    pub dev: Vec<TaggedSentence>,
}

pub fn context_entity_task(seed: u64, train_sents: usize, dev_sents: usize, lm_sents: usize) -> ContextTask {
    let mut r = rng::stream(seed, "synth.context");
    let mut taken = std::collections::HashSet::new();
    let names: Vec<String> = pseudo_words(&mut r, 80, 2, &mut taken).iter().map(|w| capitalize(w)).collect();
    let mut cue = |r: &mut Stream| pseudo_words(r, 12, 2, &mut taken);
    let per_pre = cue(&mut r);
    let per_post = cue(&mut r);
    let loc_pre = cue(&mut r);
    let loc_post = cue(&mut r);
    let fillers = pseudo_words(&mut r, 40, 2, &mut taken);

    struct Pools<'a> {
        names: [&'a [String]; 2],
        pre: [&'a [String]; 2],
        post: [&'a [String]; 2],
    }
    let half = |v: &[String], second: bool| -> Vec<String> {
        let m = v.len() / 2;
        if second { v[m..].to_vec() } else { v[..m].to_vec() }
    };
    let (per_names, loc_names) = names.split_at(40);
    let owned: Vec<[Vec<String>; 6]> = [false, true]
        .iter()
        .map(|&s| {
            [
                half(per_names, s),
                half(loc_names, s),
                half(&per_pre, s),
                half(&loc_pre, s),
                half(&per_post, s),
                half(&loc_post, s),
            ]
        })
        .collect();
    let all = [
        per_names.to_vec(),
        loc_names.to_vec(),
        per_pre.clone(),
        loc_pre.clone(),
        per_post.clone(),
        loc_post.clone(),
    ];
    let sentence = |r: &mut Stream, p: &Pools| -> TaggedSentence {
        let mut words = Vec::new();
        let mut labels = Vec::new();
        let filler = |r: &mut Stream, words: &mut Vec<String>, labels: &mut Vec<String>, max: usize| {
            for _ in 0..r.gen_range(0..=max) {
                words.push(fillers[r.gen_range(0..fillers.len())].clone());
                labels.push("O".to_string());
            }
        };
        filler(r, &mut words, &mut labels, 2);
        let entities = if r.gen_bool(0.3) { 2 } else { 1 };
        for _ in 0..entities {
            let class = r.gen_range(0..2);
            let tag = ["PER", "LOC"][class];
            words.push(p.pre[class].choose(r).unwrap().clone());
            labels.push("O".into());
            let len = if r.gen_bool(0.3) { 2 } else { 1 };
            for k in 0..len {
                words.push(p.names[class].choose(r).unwrap().clone());
                let pfx = match (len, k) {
                    (1, _) => "S",
                    (_, 0) => "B",
                    _ => "E",
                };
                labels.push(format!("{pfx}-{tag}"));
            }
            words.push(p.post[class].choose(r).unwrap().clone());
            labels.push("O".into());
            filler(r, &mut words, &mut labels, 2);
        }
        TaggedSentence {
            extra: vec![Vec::new(); words.len()],
            words,
            labels,
        }
    };
    fn make(o: &[Vec<String>; 6]) -> Pools<'_> {
        Pools {
            names: [&o[0], &o[1]],
            pre: [&o[2], &o[3]],
            post: [&o[4], &o[5]],
        }
    }
    let (pa, pb, pall) = (make(&owned[0]), make(&owned[1]), make(&all));
    let train = (0..train_sents).map(|_| sentence(&mut r, &pa)).collect();
    let dev = (0..dev_sents).map(|_| sentence(&mut r, &pb)).collect();
    let lm_corpus = (0..lm_sents).map(|_| sentence(&mut r, &pall).words).collect();
    ContextTask { lm_corpus, train, dev }
}

/// A constructed task whose label signal lives in two known LM layers.
#[derive(Clone, Debug)]
pub struct SignalTask {
    pub vocab: Vocab,
    pub fwd: LmModel,
    pub bwd: LmModel,
    pub train: Vec<TaggedSentence>,
    pub dev: Vec<TaggedSentence>,
    /// Zero-based indices of the signal-bearing layers.
    pub signal_layers: Vec<usize>,
}

pub const SIGNAL_EMBED: usize = 6;
pub const SIGNAL_HIDDEN: usize = 8;
pub const SIGNAL_DEPTH: usize = 6;

/// Six-layer dense forward LM. Embedding dims 0 and 1 flag A-cues and
/// B-cues, the rest are random. Layers 0-3 are memoryless random maps of
/// their inputs. Layer 4 remembers whether the previous token was an A-cue,
/// layer 5 the same for B-cues; neither reads earlier layers. A name right
/// after an A-cue is `S-A`, after a B-cue `S-B`, and after a filler `O`, so
/// both flags are needed. The backward LM shares the embedding but all its
/// layers are memoryless noise.
pub fn signal_layer_task(seed: u64, train_sents: usize, dev_sents: usize) -> Result<SignalTask> {
    let mut r = rng::stream(seed, "synth.signal");
    let mut taken = std::collections::HashSet::new();
    let a_cues = fixed_words(&mut r, 4, &mut taken);
    let b_cues = fixed_words(&mut r, 4, &mut taken);
    let names = fixed_words(&mut r, 24, &mut taken);
    let fillers = fixed_words(&mut r, 8, &mut taken);
    let mut tokens = a_cues.clone();
    tokens.extend(b_cues.iter().cloned());
    tokens.extend(names.iter().cloned());
    tokens.extend(fillers.iter().cloned());
    let vocab = Vocab::from_tokens(tokens, 0)?;

    let dims = LmDims {
        vocab_size: vocab.len(),
        embed_dim: SIGNAL_EMBED,
        hidden_dim: SIGNAL_HIDDEN,
        layers: SIGNAL_DEPTH,
        proj_dim: 4,
    };
    let mut emb = uniform(vocab.len(), SIGNAL_EMBED, 1.0, &mut r);
    for id in 0..vocab.len() {
        let tok = vocab.token(id).unwrap_or_default();
        emb.set(id, 0, if a_cues.iter().any(|c| c == tok) { 1.0 } else { 0.0 });
        emb.set(id, 1, if b_cues.iter().any(|c| c == tok) { 1.0 } else { 0.0 });
    }
    let fwd = constructed_lm(dims, Direction::Forward, seed, &emb, 4, &mut r);
    let bwd = constructed_lm(dims, Direction::Backward, seed, &emb, SIGNAL_DEPTH, &mut r);

    let push = |words: &mut Vec<String>, labels: &mut Vec<String>, w: &str, l: &str| {
        words.push(w.to_string());
        labels.push(l.to_string());
    };
    let sentence = |r: &mut Stream| -> TaggedSentence {
        let mut words = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..r.gen_range(1..=3) {
            for _ in 0..r.gen_range(0..=1) {
                push(&mut words, &mut labels, fillers.choose(r).unwrap(), "O");
            }
            match r.gen_range(0..3) {
                0 => {
                    push(&mut words, &mut labels, a_cues.choose(r).unwrap(), "O");
                    push(&mut words, &mut labels, names.choose(r).unwrap(), "S-A");
                }
                1 => {
                    push(&mut words, &mut labels, b_cues.choose(r).unwrap(), "O");
                    push(&mut words, &mut labels, names.choose(r).unwrap(), "S-B");
                }
                _ => {
                    push(&mut words, &mut labels, fillers.choose(r).unwrap(), "O");
                    push(&mut words, &mut labels, names.choose(r).unwrap(), "O");
                }
            }
        }
        TaggedSentence {
            extra: vec![Vec::new(); words.len()],
            words,
            labels,
        }
    };
    let train = (0..train_sents).map(|_| sentence(&mut r)).collect();
    let dev = (0..dev_sents).map(|_| sentence(&mut r)).collect();
    Ok(SignalTask {
        vocab,
        fwd,
        bwd,
        train,
        dev,
        signal_layers: vec![4, 5],
    })
}

/// Dense LM with hand-set layers: the first `noise_layers` are memoryless
/// random maps, each later layer `k` flags embedding dim `k - noise_layers`
/// at the previous step.
fn constructed_lm(dims: LmDims, dir: Direction, seed: u64, emb: &Tensor, noise_layers: usize, r: &mut Stream) -> LmModel {
    let h = dims.hidden_dim;
    let mut lm = LmModel::new(dims, dir, seed);
    lm.params.set(lm.embedding, emb.clone());
    let (gi, gf, gg, go) = (0, h, 2 * h, 3 * h);
    for k in 0..dims.layers {
        let layer = lm.stack.layers[k].clone();
        let in_dim = layer.input_dim;
        let mut w = Tensor::zeros(in_dim + h, 4 * h);
        let mut b = Tensor::zeros(1, 4 * h);
        for j in 0..h {
            b.set(0, gf + j, -6.0);
        }
        if k < noise_layers {
            let noise = uniform(in_dim, 4 * h, 0.8, r);
            for i in 0..in_dim {
                for j in 0..4 * h {
                    w.set(i, j, noise.get(i, j));
                }
            }
        } else {
            for j in 0..h {
                b.set(0, gi + j, 4.0);
                b.set(0, go + j, 4.0);
            }
            // unit 0 flags a cue at t, the others copy unit 0 from t-1
            w.set(k - noise_layers, gg, 4.0);
            for j in 1..h {
                w.set(in_dim, gg + j, 5.0);
            }
        }
        lm.params.set(layer.w, w);
        lm.params.set(layer.b, b);
    }
    lm
}
