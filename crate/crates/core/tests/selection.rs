use lmprune::embedder::ContextEmbedder;
use lmprune::io::conll::TaggedSentence;
use lmprune::io::vocab::Vocab;
use lmprune::lm::{Direction, LmDims, LmModel};
use lmprune::pruning::{
    chi_square_uniform, prune, run_selection, selection_pattern, PruneConfig, PruneReport, RegKind, RegularizerSpec,
    Selection,
};
use lmprune::recurrent::LayerMask;
use lmprune::synth;
use lmprune::tagger::{CharVocab, Encoded, LabelSet, Tagger, TaggerDims, TaggerTrainConfig};
use lmprune::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn encode(t: &Tagger, data: &[TaggedSentence]) -> Vec<Encoded> {
    data.iter().map(|s| t.encode(&s.words, Some(&s.labels)).unwrap()).collect()
}

/// Every layer reads only the word embedding through weights drawn from the
/// same distribution, so layer indices are exchangeable.
fn exchangeable_lm(vocab: usize, layers: usize, dir: Direction, r: &mut ChaCha8Rng) -> LmModel {
    let dims = LmDims {
        vocab_size: vocab,
        embed_dim: 3,
        hidden_dim: 2,
        layers,
        proj_dim: 2,
    };
    let mut lm = LmModel::new(dims, dir, r.gen());
    let h = dims.hidden_dim;
    for k in 0..layers {
        let layer = lm.stack.layers[k].clone();
        let mut w = Tensor::zeros(layer.input_dim + h, 4 * h);
        for i in 0..dims.embed_dim {
            for j in 0..4 * h {
                w.set(i, j, r.gen_range(-0.8..0.8));
            }
        }
        let mut b = Tensor::zeros(1, 4 * h);
        for j in 0..h {
            b.set(0, h + j, -6.0);
        }
        lm.params.set(layer.w, w);
        lm.params.set(layer.b, b);
    }
    lm
}

fn word_task(r: &mut ChaCha8Rng, n: usize) -> Vec<TaggedSentence> {
    let words = ["pa", "ke", "ri", "lo", "mu", "sa"];
    (0..n)
        .map(|_| {
            let len = r.gen_range(2..6);
            let w: Vec<String> = (0..len).map(|_| words[r.gen_range(0..words.len())].to_string()).collect();
            let labels = w.iter().map(|x| if x.starts_with('p') || x.starts_with('m') { "S-X" } else { "O" }.to_string()).collect();
            TaggedSentence {
                words: w,
                labels,
                extra: Vec::new(),
            }
        })
        .collect()
}

fn blind_tagger(vocab: Vocab, f: LmModel, b: LmModel, labels: LabelSet, seed: u64) -> Tagger {
    let emb = ContextEmbedder::new(vocab, f, b, 4, seed).unwrap();
    let dims = TaggerDims {
        char_embed: 2,
        char_hidden: 2,
        word_dim: 4,
        word_hidden: 4,
    };
    Tagger::new(dims, Vocab::specials_only(0), CharVocab::from_chars(Vec::new()), labels, Some(emb), seed).unwrap()
}

fn prune_cfg(lambda0: f64, lambda1: usize, epochs: usize) -> PruneConfig {
    let mut c = PruneConfig::new(
        RegularizerSpec {
            kind: RegKind::R3,
            lambda0,
            lambda1,
        },
        TaggerTrainConfig {
            lr0: 0.05,
            ..TaggerTrainConfig::default()
        },
    );
    c.epochs = epochs;
    c
}

#[test]
fn exchangeable_layers_are_retained_uniformly() {
    const LAYERS: usize = 4;
    const RUNS: u64 = 50;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let seeds: Vec<u64> = (0..RUNS).collect();
    let selections: Vec<Selection> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(seeds.len().div_ceil(threads))
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&seed| {
                            let mut r = ChaCha8Rng::seed_from_u64(seed);
                            let data = word_task(&mut r, 30);
                            let vocab = Vocab::build(data.iter().flat_map(|s| s.words.iter().map(String::as_str)), 0);
                            let f = exchangeable_lm(vocab.len(), LAYERS, Direction::Forward, &mut r);
                            let b = exchangeable_lm(vocab.len(), LAYERS, Direction::Backward, &mut r);
                            let labels = LabelSet::build(["O", "S-X"]);
                            let t = blind_tagger(vocab, f, b, labels, 1000 + seed);
                            let enc = encode(&t, &data);
                            let mut c = prune_cfg(1.0, 1, 30);
                            c.train.seed = seed;
                            let (_, rep) = prune(t, &enc, &enc, &c).unwrap();
                            Selection::of(seed, &rep)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let stats = selection_pattern(&selections).unwrap();
    assert_eq!(stats.runs, RUNS as usize);
    let counts: Vec<usize> = stats.fwd_counts.iter().zip(&stats.bwd_counts).map(|(a, b)| a + b).collect();
    assert!(counts.iter().sum::<usize>() > 0, "nothing retained: {stats:?}");
    let (chi2, dof, p) = chi_square_uniform(&counts).unwrap();
    assert_eq!(dof, LAYERS - 1);
    assert!(p > 0.01, "retention counts {counts:?}: chi2 {chi2:.2}, p {p:.4}");
}

#[test]
fn single_run_histogram_is_zero_one() {
    let s = Selection {
        seed: 3,
        keep_fwd: vec![true, false, false, true],
        keep_bwd: vec![false, false, true, false],
    };
    let stats = selection_pattern(std::slice::from_ref(&s)).unwrap();
    assert_eq!(stats.runs, 1);
    assert_eq!(stats.fwd_freq(), vec![1.0, 0.0, 0.0, 1.0]);
    assert_eq!(stats.bwd_freq(), vec![0.0, 0.0, 1.0, 0.0]);
    assert!(stats.csv().contains("fwd,3,1,1,1.0000"));
}

#[test]
fn pruned_signal_task_matches_best_two_layer_subset() {
    let task = synth::signal_layer_task(11, 300, 100).unwrap();
    let labels = LabelSet::build(task.train.iter().flat_map(|s| s.labels.iter()));
    let t = blind_tagger(task.vocab.clone(), task.fwd.clone(), task.bwd.clone(), labels, 11);
    let train = encode(&t, &task.train);
    let dev = encode(&t, &task.dev);
    let tc = TaggerTrainConfig {
        epochs: 15,
        patience: 5,
        lr0: 0.05,
        seed: 11,
        ..TaggerTrainConfig::default()
    };
    let (trained, _) = lmprune::tagger::train_tagger(t.clone(), &train, &dev, &tc, |_| {}).unwrap();

    // oracle: train from scratch on every 2-subset of the forward stack
    let layers = task.fwd.stack.num_layers();
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for a in 0..layers {
        for b in a + 1..layers {
            let mut masked = t.clone();
            let e = masked.embedder.as_mut().unwrap();
            e.fwd_mask = LayerMask::from_bits(&(0..layers).map(|l| l == a || l == b).collect::<Vec<_>>());
            e.bwd_mask = LayerMask::from_bits(&vec![false; layers]);
            let (_, rep) = lmprune::tagger::train_tagger(masked, &train, &dev, &tc, |_| {}).unwrap();
            if rep.best_dev_f1 > best.0 {
                best = (rep.best_dev_f1, (a, b));
            }
        }
    }

    let mut c = prune_cfg(0.5, 2, 20);
    c.train = tc;
    let (pruned, rep) = prune(trained, &train, &dev, &c).unwrap();
    assert!(rep.distance_from_binary <= 1e-2, "{}", rep.summary());
    assert!(PruneReport::kept(&rep.keep_fwd).len() <= 2, "{}", rep.summary());
    assert!(
        rep.dev_f1_after >= best.0 - 0.02,
        "pruned F1 {} vs best subset {:?} at {}",
        rep.dev_f1_after,
        best.1,
        best.0
    );
    assert!(pruned.embedder.unwrap().fwd.stack.num_layers() <= 2);
}

#[test]
fn ten_layer_model_pruned_to_two_saves_most_flops() {
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let data = word_task(&mut r, 60);
    let vocab = Vocab::build(data.iter().flat_map(|s| s.words.iter().map(String::as_str)), 0);
    let dims = LmDims {
        vocab_size: vocab.len(),
        embed_dim: 8,
        hidden_dim: 8,
        layers: 10,
        proj_dim: 8,
    };
    let f = LmModel::new(dims, Direction::Forward, 1);
    let b = LmModel::new(dims, Direction::Backward, 2);
    let t = blind_tagger(vocab, f, b, LabelSet::build(["O", "S-X"]), 3);
    let enc = encode(&t, &data);
    let mut c = prune_cfg(5.0, 2, 100);
    c.stop_when_settled = true;
    let (_, rep) = prune(t, &enc, &enc, &c).unwrap();
    let kept = PruneReport::kept(&rep.keep_fwd).len().max(PruneReport::kept(&rep.keep_bwd).len());
    assert!(kept <= 2, "{}", rep.summary());
    assert!(rep.flops_reduction() >= 0.8, "{}", rep.summary());
}

#[test]
fn selection_needs_two_runs() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let data = word_task(&mut r, 4);
    let vocab = Vocab::build(data.iter().flat_map(|s| s.words.iter().map(String::as_str)), 0);
    let f = exchangeable_lm(vocab.len(), 2, Direction::Forward, &mut r);
    let b = exchangeable_lm(vocab.len(), 2, Direction::Backward, &mut r);
    let t = blind_tagger(vocab, f, b, LabelSet::build(["O", "S-X"]), 4);
    let enc = encode(&t, &data);
    assert!(run_selection(&t, &enc, &enc, &prune_cfg(1.0, 1, 1), &[1], 2).is_err());
    let runs = run_selection(&t, &enc, &enc, &prune_cfg(1.0, 1, 1), &[1, 2, 1], 2).unwrap();
    assert_eq!(runs.len(), 3);
    assert_eq!(runs[0].0.seed, 1);
    // same seed, same run
    assert_eq!(runs[0].1.z_fwd, runs[2].1.z_fwd);
}
