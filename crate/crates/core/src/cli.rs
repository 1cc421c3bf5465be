//! The `lmprune` command line. Every subcommand writes a manifest recording
//! its arguments, resolved configuration, input and output digests and the
//! metrics it logged, so `replay` can rerun it and compare.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::embedder::ContextEmbedder;
use crate::error::{Error, Result};
use crate::io::checkpoint::{self, Loaded};
use crate::io::config::{data_path, RunConfig};
use crate::io::conll::{read_conll, write_conll, write_predictions, TaggedSentence};
use crate::io::manifest::Manifest;
use crate::io::vectors::{apply_vectors, read_vectors};
use crate::io::vocab::{read_sentences, Vocab};
use crate::lm::{perplexity, train_lm, unigram_perplexity, Direction, LmModel};
use crate::pruning::{estimate_flops, prune, ModelShape, PruneReport, RegKind};
use crate::synth;
use crate::tagger::{micro_f1, CharVocab, Encoded, LabelSet, Tagger};

#[derive(Parser, Debug)]
#[command(name = "lmprune", version, about = "Dense LSTM LMs, BiLSTM-CRF tagging and task-guided layer pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Count tokens in a corpus (one sentence per line) and write a vocabulary.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        min_count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train one direction of a dense LSTM language model.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        /// Held-out corpus; defaults to the last 5% of `--corpus`.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Vocabulary file; built from the corpus when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value = "forward")]
        direction: String,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a BiLSTM-CRF tagger, optionally on top of a forward/backward LM pair.
    TrainTagger {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long, requires = "lm_bwd")]
        lm_fwd: Option<PathBuf>,
        #[arg(long, requires = "lm_fwd")]
        lm_bwd: Option<PathBuf>,
        /// Pretrained word vectors (text format).
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Select LM layers for a trained tagger and delete the rest.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        lambda0: Option<f64>,
        #[arg(long)]
        lambda1: Option<usize>,
        #[arg(long)]
        regularizer: Option<RegKind>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Report prefix: writes `<prefix>.csv` and `<prefix>.txt`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a tagger on labeled data (or an LM on a corpus).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the input columns plus a predicted-label column.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write contextual representations `r_t`, one token per line.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Column file or one sentence per line.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Multiply-adds per word, with a per-layer breakdown.
    Flops {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Tagging throughput on a data file.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Generate synthetic corpora and tasks.
    Synth {
        /// lm, context or signal.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out_dir: PathBuf,
        /// Approximate corpus size for `lm`.
        #[arg(long, default_value_t = 1_000_000)]
        bytes: usize,
        #[arg(long, default_value_t = 500)]
        train_sents: usize,
        #[arg(long, default_value_t = 200)]
        dev_sents: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Rerun a recorded command and compare its metrics and outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Parse `argv` (program name first) and run. Returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let args = argv.get(2..).unwrap_or_default().to_vec();
    match execute(cli.command, &args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    manifest: Manifest,
    manifest_path: PathBuf,
}

impl Ctx {
    fn new(name: &str, args: &[String], common: &Common, primary_out: Option<&Path>) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(&data_path(p))?,
            None => RunConfig::default(),
        };
        for kv in &common.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        let manifest_path = match (&common.manifest, primary_out) {
            (Some(p), _) => p.clone(),
            (None, Some(o)) => PathBuf::from(format!("{}.manifest", o.display())),
            (None, None) => PathBuf::from(format!("{name}.manifest")),
        };
        let mut manifest = Manifest::new(name, args, &cfg.to_text());
        if let Some(p) = &common.config {
            manifest.add_input(&data_path(p))?;
        }
        Ok(Ctx {
            cfg,
            manifest,
            manifest_path,
        })
    }

    fn input(&mut self, p: &Path) -> Result<PathBuf> {
        let p = data_path(p);
        self.manifest.add_input(&p)?;
        Ok(p)
    }

    fn finish(self) -> Result<i32> {
        self.manifest.save(&self.manifest_path)?;
        info!("manifest written to {}", self.manifest_path.display());
        Ok(0)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn encode_all(t: &Tagger, data: &[TaggedSentence]) -> Result<Vec<Encoded>> {
    data.iter().map(|s| t.encode(&s.words, Some(&s.labels))).collect()
}

fn load_tagger(path: &Path) -> Result<Tagger> {
    Ok(checkpoint::load_tagger(path)?.0)
}

/// Sentences from a column file, or from plain text when the file has no
/// label column.
fn read_words(path: &Path) -> Result<Vec<Vec<String>>> {
    match read_conll(path, false) {
        Ok(s) => Ok(s.into_iter().map(|s| s.words).collect()),
        Err(Error::Parse { .. }) => read_sentences(path),
        Err(e) => Err(e),
    }
}

fn execute(command: Command, args: &[String]) -> Result<i32> {
    match command {
        Command::BuildVocab {
            corpus,
            min_count,
            out,
            common,
        } => {
            let mut ctx = Ctx::new("build-vocab", args, &common, Some(&out))?;
            let corpus = ctx.input(&corpus)?;
            let v = Vocab::build_from_file(&corpus, min_count.unwrap_or(ctx.cfg.min_count))?;
            v.save(&out)?;
            println!("{} tokens ({} with specials), hash {}", v.len() - 3, v.len(), v.hash());
            ctx.manifest.metric_text("vocab_size", v.len());
            ctx.manifest.metric_text("vocab_hash", v.hash());
            ctx.manifest.add_output(&out)?;
            ctx.finish()
        }
        Command::TrainLm {
            corpus,
            dev,
            vocab,
            direction,
            out,
            log,
            common,
        } => {
            let mut ctx = Ctx::new("train-lm", args, &common, Some(&out))?;
            let direction = Direction::parse(&direction)
                .ok_or_else(|| Error::Config(format!("unknown direction {direction:?}")))?;
            let sents = read_sentences(&ctx.input(&corpus)?)?;
            let (train, dev) = match dev {
                Some(d) => (sents, read_sentences(&ctx.input(&d)?)?),
                None => synth::split(&sents, 0.05),
            };
            let vocab = match vocab {
                Some(v) => Vocab::load(&ctx.input(&v)?)?,
                None => Vocab::build(train.iter().flatten().map(String::as_str), ctx.cfg.min_count),
            };
            let tr = vocab.encode_stream(&train);
            let dv = vocab.encode_stream(&dev);
            let uni = unigram_perplexity(&tr, &dv, vocab.len())?;
            let model = LmModel::new(ctx.cfg.lm_dims(vocab.len()), direction, ctx.cfg.seed);
            let mut csv = String::from("epoch,train_nll,dev_ppl\n");
            let (model, rep) = train_lm(model, &tr, &dv, &ctx.cfg.lm_train(), |e| {
                println!("epoch {}: train nll {:.4}, dev ppl {:.3}", e.epoch, e.train_nll, e.dev_ppl);
                let _ = writeln!(csv, "{},{:?},{:?}", e.epoch, e.train_nll, e.dev_ppl);
            })?;
            checkpoint::save_lm(&out, &model, &vocab, ctx.cfg.seed)?;
            println!("best dev ppl {:.3} at epoch {} (unigram {:.3})", rep.best_dev_ppl, rep.best_epoch, uni);
            for e in &rep.log {
                ctx.manifest.metric(&format!("epoch{}.dev_ppl", e.epoch), e.dev_ppl);
            }
            ctx.manifest.metric("best_dev_ppl", rep.best_dev_ppl);
            ctx.manifest.metric_text("best_epoch", rep.best_epoch);
            ctx.manifest.metric("unigram_dev_ppl", uni);
            ctx.manifest.add_output(&out)?;
            if let Some(l) = log {
                write_file(&l, &csv)?;
                ctx.manifest.add_output(&l)?;
            }
            ctx.finish()
        }
        Command::TrainTagger {
            train,
            dev,
            lm_fwd,
            lm_bwd,
            vectors,
            out,
            log,
            common,
        } => {
            let mut ctx = Ctx::new("train-tagger", args, &common, Some(&out))?;
            let train_s = read_conll(&ctx.input(&train)?, ctx.cfg.bioes)?;
            let dev_s = read_conll(&ctx.input(&dev)?, ctx.cfg.bioes)?;
            let dims = ctx.cfg.tagger_dims();
            let embedder = match (lm_fwd, lm_bwd) {
                (Some(f), Some(b)) => {
                    let (fwd, fv, _) = checkpoint::load_lm(&ctx.input(&f)?)?;
                    let (bwd, bv, _) = checkpoint::load_lm(&ctx.input(&b)?)?;
                    if fv.hash() != bv.hash() {
                        return Err(Error::Config("forward and backward LMs use different vocabularies".into()));
                    }
                    let mut e = ContextEmbedder::new(fv, fwd, bwd, dims.word_dim, ctx.cfg.seed)?;
                    e.tie_masks = ctx.cfg.tie_masks;
                    Some(e)
                }
                _ => None,
            };
            let words = Vocab::build(train_s.iter().flat_map(|s| s.words.iter().map(String::as_str)), 0);
            let chars = CharVocab::build(train_s.iter().flat_map(|s| s.words.iter()));
            let labels = LabelSet::build(train_s.iter().flat_map(|s| s.labels.iter()));
            let mut tagger = Tagger::new(dims, words, chars, labels, embedder, ctx.cfg.seed)?;
            if let Some(v) = vectors {
                let n = apply_vectors(&mut tagger, &read_vectors(&ctx.input(&v)?)?)?;
                ctx.manifest.metric_text("pretrained_rows", n);
            }
            let tr = encode_all(&tagger, &train_s)?;
            let dv = encode_all(&tagger, &dev_s)?;
            let mut csv = String::from("epoch,lr,train_loss,dev_f1\n");
            let (tagger, rep) = crate::tagger::train_tagger(tagger, &tr, &dv, &ctx.cfg.tagger_train(), |e| {
                println!("epoch {}: loss {:.4}, dev F1 {:.4}", e.epoch, e.train_loss, e.dev_f1);
                let _ = writeln!(csv, "{},{:?},{:?},{:?}", e.epoch, e.lr, e.train_loss, e.dev_f1);
            })?;
            checkpoint::save_tagger(&out, &tagger, ctx.cfg.seed)?;
            println!("best dev F1 {:.4} at epoch {}", rep.best_dev_f1, rep.best_epoch);
            for e in &rep.log {
                ctx.manifest.metric(&format!("epoch{}.dev_f1", e.epoch), e.dev_f1);
            }
            ctx.manifest.metric("best_dev_f1", rep.best_dev_f1);
            ctx.manifest.metric_text("best_epoch", rep.best_epoch);
            ctx.manifest.add_output(&out)?;
            if let Some(l) = log {
                write_file(&l, &csv)?;
                ctx.manifest.add_output(&l)?;
            }
            ctx.finish()
        }
        Command::Prune {
            checkpoint: ckpt,
            train,
            dev,
            lambda0,
            lambda1,
            regularizer,
            max_steps,
            out,
            report,
            common,
        } => {
            let mut ctx = Ctx::new("prune", args, &common, Some(&out))?;
            if let Some(v) = lambda0 {
                ctx.cfg.lambda0 = v;
            }
            if let Some(v) = lambda1 {
                ctx.cfg.lambda1 = v;
            }
            if let Some(v) = regularizer {
                ctx.cfg.regularizer = v;
            }
            if max_steps.is_some() {
                ctx.cfg.prune_max_steps = max_steps;
            }
            ctx.manifest.config = ctx.cfg.to_text();
            let tagger = load_tagger(&ctx.input(&ckpt)?)?;
            let tr = encode_all(&tagger, &read_conll(&ctx.input(&train)?, ctx.cfg.bioes)?)?;
            let dv = encode_all(&tagger, &read_conll(&ctx.input(&dev)?, ctx.cfg.bioes)?)?;
            let (pruned, rep) = prune(tagger, &tr, &dv, &ctx.cfg.prune())?;
            checkpoint::save_tagger(&out, &pruned, ctx.cfg.seed)?;
            println!("{}", rep.summary());
            prune_metrics(&mut ctx.manifest, &rep);
            ctx.manifest.add_output(&out)?;
            if let Some(prefix) = report {
                let csv = PathBuf::from(format!("{}.csv", prefix.display()));
                let txt = PathBuf::from(format!("{}.txt", prefix.display()));
                rep.write(&csv, &txt)?;
                ctx.manifest.add_output(&csv)?;
                ctx.manifest.add_output(&txt)?;
            }
            ctx.finish()
        }
        Command::Eval {
            checkpoint: ckpt,
            data,
            out,
            common,
        } => {
            let mut ctx = Ctx::new("eval", args, &common, out.as_deref())?;
            let ckpt = ctx.input(&ckpt)?;
            let data = ctx.input(&data)?;
            match checkpoint::load_any(&ckpt)? {
                Loaded::Tagger { tagger, .. } => {
                    let sents = read_conll(&data, ctx.cfg.bioes)?;
                    let pred = sents
                        .iter()
                        .map(|s| tagger.predict(&s.words))
                        .collect::<Result<Vec<_>>>()?;
                    let gold: Vec<Vec<String>> = sents.iter().map(|s| s.labels.clone()).collect();
                    let prf = micro_f1(&gold, &pred)?;
                    println!(
                        "precision {:.4} recall {:.4} F1 {:.4} ({} correct, {} predicted, {} gold)",
                        prf.precision, prf.recall, prf.f1, prf.correct, prf.predicted, prf.gold
                    );
                    ctx.manifest.metric("precision", prf.precision);
                    ctx.manifest.metric("recall", prf.recall);
                    ctx.manifest.metric("f1", prf.f1);
                    if let Some(o) = out {
                        write_file(&o, &write_predictions(&sents, &pred)?)?;
                        ctx.manifest.add_output(&o)?;
                    }
                }
                Loaded::Lm { lm, vocab, .. } => {
                    let stream = vocab.encode_stream(&read_sentences(&data)?);
                    let ppl = perplexity(&lm, &stream, None, ctx.cfg.lm_batch.min(16), ctx.cfg.lm_unroll)?;
                    println!("{} perplexity {ppl:.4}", lm.direction);
                    ctx.manifest.metric("perplexity", ppl);
                }
            }
            ctx.finish()
        }
        Command::Embed {
            checkpoint: ckpt,
            data,
            out,
            common,
        } => {
            let mut ctx = Ctx::new("embed", args, &common, Some(&out))?;
            let tagger = load_tagger(&ctx.input(&ckpt)?)?;
            let e = tagger
                .embedder
                .as_ref()
                .ok_or_else(|| Error::Config("embed needs a tagger with LM features".into()))?;
            let sents = read_words(&ctx.input(&data)?)?;
            let mut s = String::new();
            let mut rows = 0;
            for words in &sents {
                let r = e.embed_sequence(words)?;
                for (t, w) in words.iter().enumerate() {
                    s += w;
                    for v in r.row_slice(t) {
                        let _ = write!(s, " {v}");
                    }
                    s.push('\n');
                }
                s.push('\n');
                rows += words.len();
            }
            write_file(&out, &s)?;
            println!("{rows} tokens, {} dims", e.r_dim);
            ctx.manifest.metric_text("tokens", rows);
            ctx.manifest.add_output(&out)?;
            ctx.finish()
        }
        Command::Flops { checkpoint: ckpt, common } => {
            let mut ctx = Ctx::new("flops", args, &common, None)?;
            let shape = match checkpoint::load_any(&ctx.input(&ckpt)?)? {
                Loaded::Tagger { tagger, .. } => ModelShape::of_tagger(&tagger, ctx.cfg.chars_per_word),
                Loaded::Lm { lm, .. } => ModelShape::of_lm(&lm),
            };
            let rep = estimate_flops(&shape);
            println!("MACs per word\n{rep}");
            for i in &rep.items {
                ctx.manifest.metric(&i.name, i.macs);
            }
            ctx.manifest.metric("total", rep.total());
            ctx.finish()
        }
        Command::Bench {
            checkpoint: ckpt,
            data,
            repeat,
            common,
        } => {
            let mut ctx = Ctx::new("bench", args, &common, None)?;
            let tagger = load_tagger(&ctx.input(&ckpt)?)?;
            let sents = read_words(&ctx.input(&data)?)?;
            let words: usize = sents.iter().map(Vec::len).sum();
            let start = Instant::now();
            for _ in 0..repeat.max(1) {
                for s in &sents {
                    tagger.predict(s)?;
                }
            }
            let secs = start.elapsed().as_secs_f64() / repeat.max(1) as f64;
            println!(
                "{} sentences, {words} words: {:.1} words/s, {:.1} sentences/s",
                sents.len(),
                words as f64 / secs,
                sents.len() as f64 / secs
            );
            // wall-clock rates are not replayable, only the workload is logged
            ctx.manifest.metric_text("sentences", sents.len());
            ctx.manifest.metric_text("words", words);
            ctx.finish()
        }
        Command::Synth {
            kind,
            out_dir,
            bytes,
            train_sents,
            dev_sents,
            common,
        } => {
            let mut ctx = Ctx::new("synth", args, &common, None)?;
            if common.manifest.is_none() {
                ctx.manifest_path = out_dir.join("synth.manifest");
            }
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let seed = ctx.cfg.seed;
            let lines = |s: &[Vec<String>]| s.iter().map(|w| w.join(" ") + "\n").collect::<String>();
            let mut files: Vec<(PathBuf, String)> = Vec::new();
            match kind.as_str() {
                "lm" => {
                    let c = synth::lm_corpus(seed, bytes);
                    let (tr, dv) = synth::split(&c, 0.05);
                    files.push((out_dir.join("corpus.txt"), lines(&tr)));
                    files.push((out_dir.join("dev.txt"), lines(&dv)));
                }
                "context" => {
                    let lm_sents = (bytes / 40).max(100);
                    let t = synth::context_entity_task(seed, train_sents, dev_sents, lm_sents);
                    files.push((out_dir.join("lm.txt"), lines(&t.lm_corpus)));
                    files.push((out_dir.join("train.conll"), write_conll(&t.train)));
                    files.push((out_dir.join("dev.conll"), write_conll(&t.dev)));
                }
                "signal" => {
                    let t = synth::signal_layer_task(seed, train_sents, dev_sents)?;
                    for (name, lm) in [("lm_fwd.ckpt", &t.fwd), ("lm_bwd.ckpt", &t.bwd)] {
                        let p = out_dir.join(name);
                        checkpoint::save_lm(&p, lm, &t.vocab, seed)?;
                        ctx.manifest.add_output(&p)?;
                    }
                    files.push((out_dir.join("train.conll"), write_conll(&t.train)));
                    files.push((out_dir.join("dev.conll"), write_conll(&t.dev)));
                }
                k => return Err(Error::Config(format!("unknown synth kind {k:?} (lm, context, signal)"))),
            }
            for (p, text) in &files {
                write_file(p, text)?;
                ctx.manifest.add_output(p)?;
                println!("wrote {}", p.display());
            }
            ctx.finish()
        }
        Command::Replay { manifest } => replay(&manifest),
    }
}

fn prune_metrics(m: &mut Manifest, rep: &PruneReport) {
    m.metric("dev_f1_before", rep.dev_f1_before);
    m.metric("dev_f1_masked", rep.dev_f1_masked);
    m.metric("dev_f1_after", rep.dev_f1_after);
    m.metric("flops_before", rep.flops_before);
    m.metric("flops_after", rep.flops_after);
    m.metric("distance_from_binary", rep.distance_from_binary);
    m.metric_text("steps", rep.history.len());
    m.metric_text("kept_fwd", format!("{:?}", PruneReport::kept(&rep.keep_fwd)));
    m.metric_text("kept_bwd", format!("{:?}", PruneReport::kept(&rep.keep_bwd)));
    for (i, z) in rep.z_fwd.iter().enumerate() {
        m.metric(&format!("z_fwd.{i}"), *z);
    }
    for (i, z) in rep.z_bwd.iter().enumerate() {
        m.metric(&format!("z_bwd.{i}"), *z);
    }
}

/// Rerun the recorded command with its recorded arguments, writing the new
/// manifest beside the old one, and compare metrics and output digests.
/// Outputs are overwritten in place.
pub fn replay(path: &Path) -> Result<i32> {
    let old = Manifest::load(path)?;
    let changed = old.changed_inputs();
    if !changed.is_empty() {
        for p in &changed {
            eprintln!("input changed since the recorded run: {}", p.display());
        }
        return Ok(1);
    }
    if old.command == "replay" {
        return Err(Error::Config("cannot replay a replay".into()));
    }
    let new_path = PathBuf::from(format!("{}.replay", path.display()));
    let mut args = strip_manifest_flag(&old.args);
    args.push("--manifest".into());
    args.push(new_path.display().to_string());
    let mut argv = vec!["lmprune".to_string(), old.command.clone()];
    argv.extend(args);
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config(format!("recorded arguments no longer parse: {e}")))?;
    let code = execute(cli.command, &old.args)?;
    if code != 0 {
        return Ok(code);
    }
    let new = Manifest::load(&new_path)?;
    let mut ok = true;
    for (k, a, b) in old.metric_diff(&new) {
        println!("metric {k}: recorded {a}, replayed {b}");
        ok = false;
    }
    for (k, _, _) in new.metric_diff(&old) {
        if old.get_metric(&k).is_none() {
            println!("metric {k}: not in the recorded run");
            ok = false;
        }
    }
    if old.outputs != new.outputs {
        for ((p, a), (_, b)) in old.outputs.iter().zip(&new.outputs) {
            if a != b {
                println!("output {} differs", p.display());
            }
        }
        if old.outputs.len() != new.outputs.len() {
            println!("output count {} vs {}", old.outputs.len(), new.outputs.len());
        }
        ok = false;
    }
    if old.config != new.config {
        println!("resolved config differs");
        ok = false;
    }
    if ok {
        println!(
            "replay of {} matches: {} metrics, {} outputs",
            old.command,
            old.metrics.len(),
            old.outputs.len()
        );
        Ok(0)
    } else {
        Ok(1)
    }
}

fn strip_manifest_flag(args: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--manifest" {
            skip = true;
        } else if !a.starts_with("--manifest=") {
            out.push(a.clone());
        }
    }
    out
}
