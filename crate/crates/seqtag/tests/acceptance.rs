//! Acceptance suite: one test per release criterion, each printing a
//! single PASS line (visible with `--nocapture`) after its assertions.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqtag::corpus::{
    bio_from_spans, repair_bio, spans_from_bio, validate_bio, EntitySpan, EntityType, LabelVocab,
    Sentence,
};
use seqtag::crf::{
    crf_gradients, crf_nll, log_partition, sequence_score, viterbi_decode, TransitionMatrix,
};
use seqtag::encoders::{parse_embeddings, EmbeddingProvider};
use seqtag::evaluation::{format_report, macro_average, score_sentences};
use seqtag::numeric::{finite_diff_grad, log_sum_exp, Matrix};
use seqtag::synth::generate;
use seqtag::training::serialize::to_bytes;
use seqtag::training::{
    decode_sentence, format_epoch_log, loss_for_sentence, train, Architecture, EmbeddingSource,
    ModelGrads, ModelParams, TrainConfig,
};

/// 200 seeded instances with m in 1..=5 and k in 2..=4. Half use a
/// coarse integer score grid so ties are common.
fn random_instances() -> Vec<(Matrix, TransitionMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out = Vec::with_capacity(200);
    for i in 0..200 {
        let m = rng.random_range(1..=5);
        let k = rng.random_range(2..=4);
        let grid = i % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if grid {
                rng.random_range(0..3) as f64
            } else {
                rng.random_range(-2.0..2.0)
            }
        };
        let mut p = Matrix::zeros(m, k);
        for r in 0..m {
            for c in 0..k {
                p.set(r, c, draw(&mut rng));
            }
        }
        let mut a = TransitionMatrix::new(k);
        for from in 0..k + 2 {
            for to in 0..k + 2 {
                if !a.is_masked(from, to) {
                    a.set(from, to, draw(&mut rng));
                }
            }
        }
        out.push((p, a));
    }
    out
}

/// All label sequences of length m over k labels, in counting order.
fn all_sequences(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut seqs = Vec::with_capacity(k.pow(m as u32));
    let mut cur = vec![0usize; m];
    loop {
        seqs.push(cur.clone());
        let mut pos = m;
        loop {
            if pos == 0 {
                return seqs;
            }
            pos -= 1;
            cur[pos] += 1;
            if cur[pos] < k {
                break;
            }
            cur[pos] = 0;
        }
    }
}

#[test]
fn criterion_01_partition_matches_enumeration() {
    let start = Instant::now();
    for (i, (p, a)) in random_instances().iter().enumerate() {
        let scores: Vec<f64> = all_sequences(p.rows(), p.cols())
            .iter()
            .map(|y| sequence_score(p, a, y).unwrap())
            .collect();
        let oracle = log_sum_exp(&scores).unwrap();
        let log_z = log_partition(p, a).unwrap();
        assert!(
            (log_z - oracle).abs() <= 1e-8 * oracle.abs().max(1.0),
            "instance {i}: log_partition {log_z} vs enumeration {oracle}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:.2?}");
    println!(
        "criterion 1: PASS - log_partition matches exhaustive enumeration on 200 instances \
         within 1e-8 relative ({elapsed:.2?})"
    );
}

#[test]
fn criterion_02_viterbi_matches_brute_force() {
    for (i, (p, a)) in random_instances().iter().enumerate() {
        let best = all_sequences(p.rows(), p.cols())
            .into_iter()
            .map(|y| (sequence_score(p, a, &y).unwrap(), y))
            .fold(None::<(f64, Vec<usize>)>, |acc, (s, y)| match acc {
                None => Some((s, y)),
                Some((bs, by)) => {
                    // Among maximal scores prefer the sequence whose
                    // reversed form is lexicographically smallest: that
                    // is what lowest-index backtracking tie-breaks to.
                    let better = s > bs
                        || (s == bs
                            && y.iter().rev().lt(by.iter().rev()));
                    Some(if better { (s, y) } else { (bs, by) })
                }
            })
            .unwrap();
        let (path, score) = viterbi_decode(p, a).unwrap();
        assert_eq!(path, best.1, "instance {i}: path mismatch");
        assert_eq!(
            score,
            sequence_score(p, a, &path).unwrap(),
            "instance {i}: reported score"
        );
    }
    println!(
        "criterion 2: PASS - viterbi_decode equals brute-force argmax with the declared \
         tie-break on 200/200 instances, scores exact"
    );
}

fn random_tagged_sentence(rng: &mut ChaCha8Rng, vocab: &LabelVocab) -> Sentence {
    let pool = ["alpha", "beta", "gamma", "delta", "epsilon"];
    let pos_pool = ["NN", "VBD", "DT"];
    let m = rng.random_range(1..=4);
    let tokens: Vec<String> = (0..m)
        .map(|_| pool[rng.random_range(0..pool.len())].to_string())
        .collect();
    let mut spans = std::collections::BTreeSet::new();
    let mut i = 0;
    while i < m {
        if rng.random_bool(0.4) {
            let end = (i + rng.random_range(0..2)).min(m - 1);
            let types = vocab.entity_types();
            spans.insert(EntitySpan {
                start: i,
                end,
                entity_type: types[rng.random_range(0..types.len())],
            });
            i = end + 2;
        } else {
            i += 1;
        }
    }
    let mut s = Sentence::new(tokens);
    s.gold_tags = Some(bio_from_spans(&spans, m).unwrap());
    s.pos_tags = Some(
        (0..m)
            .map(|_| pos_pool[rng.random_range(0..pos_pool.len())].to_string())
            .collect(),
    );
    s.id = Some("fd".into());
    s
}

fn assert_close(name: &str, instance: usize, analytic: &Matrix, fd: &Matrix, tol: f64) {
    for (a, f) in analytic.data().iter().zip(fd.data()) {
        assert!(
            (a - f).abs() <= tol,
            "instance {instance} {name}: analytic {a} vs finite difference {f}"
        );
    }
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    // CRF-level gradients on 50 random instances, 1e-6 absolute.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..50 {
        let m = rng.random_range(1..=4);
        let k = rng.random_range(2..=4);
        let p = Matrix::from_fn(m, k, |_, _| rng.random_range(-2.0..2.0));
        let mut a = TransitionMatrix::new(k);
        for from in 0..k + 2 {
            for to in 0..k + 2 {
                if !a.is_masked(from, to) {
                    a.set(from, to, rng.random_range(-2.0..2.0));
                }
            }
        }
        let gold: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let (d_p, d_a) = crf_gradients(&p, &a, &gold).unwrap();
        let fd_p = finite_diff_grad(|q| crf_nll(q, &a, &gold).unwrap(), &p, 1e-5);
        assert_close("dP", i, &d_p, &fd_p, 1e-6);
        let fd_a = finite_diff_grad(
            |q| crf_nll(&p, &TransitionMatrix::from_matrix(q.clone()).unwrap(), &gold).unwrap(),
            a.matrix(),
            1e-5,
        );
        assert_close("dA", i, &d_a, &fd_a, 1e-6);
    }

    // Full bilstm-crf parameter gradients on 50 random instances, 1e-4
    // absolute across every tensor.
    let vocab = LabelVocab::full();
    for i in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let sentence = random_tagged_sentence(&mut rng, &vocab);
        let config = TrainConfig {
            dropout: 0.0,
            hidden_dim: rng.random_range(2..=3),
            embed_dim: rng.random_range(2..=3),
            pos_features: i % 2 == 0,
            bio_mask: i % 3 == 0,
            ..TrainConfig::defaults_for(Architecture::BilstmCrf)
        };
        let params = ModelParams::init(
            std::slice::from_ref(&sentence),
            &config,
            EmbeddingSource::Trainable,
            &mut rng,
        )
        .unwrap();

        let mut grads = ModelGrads::zeros_like(&params);
        let mut g_rng = ChaCha8Rng::seed_from_u64(0);
        seqtag::training::loss_and_grads(&sentence, &params, &config, &mut g_rng, &mut grads)
            .unwrap();

        let loss = |p: &ModelParams| -> f64 {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            loss_for_sentence(&sentence, p, &config, &mut r).unwrap()
        };

        // (name, analytic gradient, current value, write-back selector)
        type Select = fn(&mut ModelParams) -> &mut Matrix;
        let select_table: Select = |p| match &mut p.provider {
            EmbeddingProvider::Trainable { table, .. } => table,
            EmbeddingProvider::Precomputed { .. } => unreachable!("trainable source"),
        };
        let table = match &params.provider {
            EmbeddingProvider::Trainable { table, .. } => table,
            EmbeddingProvider::Precomputed { .. } => unreachable!("trainable source"),
        };
        let bilstm = params.bilstm.as_ref().unwrap();
        let bg = grads.bilstm.as_ref().unwrap();
        let blocks: [(&str, &Matrix, &Matrix, Select); 9] = [
            ("table", grads.table.as_ref().unwrap(), table, select_table),
            ("fwd.w_input", &bg.forward.w_input, &bilstm.forward.w_input, |p| {
                &mut p.bilstm.as_mut().unwrap().forward.w_input
            }),
            ("fwd.w_hidden", &bg.forward.w_hidden, &bilstm.forward.w_hidden, |p| {
                &mut p.bilstm.as_mut().unwrap().forward.w_hidden
            }),
            ("fwd.bias", &bg.forward.bias, &bilstm.forward.bias, |p| {
                &mut p.bilstm.as_mut().unwrap().forward.bias
            }),
            ("bwd.w_input", &bg.backward.w_input, &bilstm.backward.w_input, |p| {
                &mut p.bilstm.as_mut().unwrap().backward.w_input
            }),
            ("bwd.w_hidden", &bg.backward.w_hidden, &bilstm.backward.w_hidden, |p| {
                &mut p.bilstm.as_mut().unwrap().backward.w_hidden
            }),
            ("bwd.bias", &bg.backward.bias, &bilstm.backward.bias, |p| {
                &mut p.bilstm.as_mut().unwrap().backward.bias
            }),
            ("head.w", &grads.head[0].w, &params.head.layers[0].w, |p| {
                &mut p.head.layers[0].w
            }),
            ("head.b", &grads.head[0].b, &params.head.layers[0].b, |p| {
                &mut p.head.layers[0].b
            }),
        ];

        for (name, analytic, value, select) in blocks {
            let fd = finite_diff_grad(
                |m| {
                    let mut p = params.clone();
                    *select(&mut p) = m.clone();
                    loss(&p)
                },
                value,
                1e-5,
            );
            assert_close(name, i as usize, analytic, &fd, 1e-4);
        }
        let fd_transitions = finite_diff_grad(
            |m| {
                let mut p = params.clone();
                p.transitions = Some(TransitionMatrix::from_matrix(m.clone()).unwrap());
                loss(&p)
            },
            params.transitions.as_ref().unwrap().matrix(),
            1e-5,
        );
        assert_close(
            "transitions",
            i as usize,
            grads.transitions.as_ref().unwrap(),
            &fd_transitions,
            1e-4,
        );
    }
    println!(
        "criterion 3: PASS - crf gradients within 1e-6 and full bilstm-crf gradients within \
         1e-4 of central finite differences, 50 instances each"
    );
}

#[test]
fn criterion_04_path_distribution_normalizes() {
    for (i, (p, a)) in random_instances().iter().enumerate() {
        let log_z = log_partition(p, a).unwrap();
        let total: f64 = all_sequences(p.rows(), p.cols())
            .iter()
            .map(|y| (sequence_score(p, a, y).unwrap() - log_z).exp())
            .sum();
        assert!(
            (total - 1.0).abs() <= 1e-8,
            "instance {i}: probabilities sum to {total}"
        );
    }
    println!(
        "criterion 4: PASS - path probabilities sum to 1 within 1e-8 on all 200 enumeration \
         instances"
    );
}

#[test]
fn criterion_05_macro_average_reference_values() {
    let dev = [0.9224, 0.9708, 0.7834, 0.9039, 0.7955, 0.8789];
    let test = [0.7449, 0.8848, 0.6755, 0.7107, 0.5888, 0.6998];
    let dev_avg = macro_average(&dev);
    let test_avg = macro_average(&test);
    assert!((dev_avg - 0.8758).abs() < 5e-5, "dev macro {dev_avg}");
    assert!((test_avg - 0.7174).abs() < 5e-5, "test macro {test_avg}");
    println!(
        "criterion 5: PASS - macro_average reproduces the reference averages 0.8758 and \
         0.7174 within 5e-5"
    );
}

#[test]
fn criterion_06_bio_algebra_properties() {
    let vocab = LabelVocab::full();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let types = vocab.entity_types().to_vec();
    for case in 0..10_000 {
        let m = rng.random_range(1..=12);
        let mut spans = std::collections::BTreeSet::new();
        let mut i = 0;
        while i < m {
            if rng.random_bool(0.5) {
                let end = (i + rng.random_range(0..3)).min(m - 1);
                spans.insert(EntitySpan {
                    start: i,
                    end,
                    entity_type: types[rng.random_range(0..types.len())],
                });
                i = end + 1;
            } else {
                i += 1;
            }
        }
        let tags = bio_from_spans(&spans, m).unwrap();
        assert!(validate_bio(&tags, &vocab).unwrap().is_empty(), "case {case}");
        assert_eq!(spans_from_bio(&tags).unwrap(), spans, "case {case}");
        assert_eq!(repair_bio(&tags), tags, "case {case}");

        // A uniformly random tag soup exercises repair: output must be
        // valid and repairing again must change nothing.
        let soup: Vec<String> = (0..m)
            .map(|_| vocab.tags()[rng.random_range(0..vocab.tags().len())].clone())
            .collect();
        let repaired = repair_bio(&soup);
        assert!(validate_bio(&repaired, &vocab).unwrap().is_empty(), "case {case}");
        assert_eq!(repair_bio(&repaired), repaired, "case {case}");
    }
    println!(
        "criterion 6: PASS - span round-trip, repair idempotence, and repair validity hold on \
         10000 random sequences"
    );
}

#[test]
fn criterion_07_overfit_sanity() {
    let start = Instant::now();
    let corpus = generate(10, 0);
    let config = TrainConfig {
        epochs: 300,
        learning_rate: 0.05,
        seed: 0,
        dropout: 0.0,
        batch_size: 1,
        hidden_dim: 16,
        embed_dim: 16,
        ..TrainConfig::defaults_for(Architecture::BilstmCrf)
    };
    let (params, log) = train(&corpus, Some(&corpus), &config, EmbeddingSource::Trainable).unwrap();
    let first_perfect = log.iter().find(|e| e.dev_f1 >= 1.0).map(|e| e.epoch);
    assert!(
        first_perfect.is_some(),
        "never reached F1 1.0; best {:?}",
        log.iter().map(|e| e.dev_f1).fold(0.0, f64::max)
    );
    let preds: Vec<Vec<String>> = corpus
        .iter()
        .map(|s| decode_sentence(&params, s).unwrap())
        .collect();
    let report = score_sentences(&corpus, &preds, &params.vocab).unwrap();
    assert_eq!(report.macro_f1, 1.0, "returned params are not the perfect epoch");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:.2?}");
    println!(
        "criterion 7: PASS - bilstm-crf reaches training F1 1.0 at epoch {} of 300 (lr 0.05, \
         seed 0) in {elapsed:.2?}",
        first_perfect.unwrap()
    );
}

#[test]
fn criterion_08_synthetic_generalization() {
    let start = Instant::now();
    let train_set = generate(2000, 1);
    let dev_set = generate(200, 2);
    let identical = |arch: Architecture| TrainConfig {
        epochs: 60,
        learning_rate: 0.05,
        dropout: 0.0,
        batch_size: 8,
        hidden_dim: 32,
        embed_dim: 16,
        ..TrainConfig::defaults_for(arch)
    };
    let mut scores = Vec::new();
    for arch in [Architecture::BilstmCrf, Architecture::Linear] {
        let (params, _) = train(
            &train_set,
            Some(&dev_set),
            &identical(arch),
            EmbeddingSource::Trainable,
        )
        .unwrap();
        let preds: Vec<Vec<String>> = dev_set
            .iter()
            .map(|s| decode_sentence(&params, s).unwrap())
            .collect();
        scores.push(score_sentences(&dev_set, &preds, &params.vocab).unwrap().macro_f1);
    }
    let (bilstm, linear) = (scores[0], scores[1]);
    assert!(bilstm >= 0.95, "bilstm-crf dev macro F1 {bilstm}");
    assert!(
        bilstm - linear >= 0.01,
        "bilstm-crf {bilstm} does not beat linear {linear} by 0.01"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:.2?}");
    println!(
        "criterion 8: PASS - on 2000/200 synthetic sentences bilstm-crf reaches dev macro F1 \
         {bilstm:.4} vs linear {linear:.4} in {elapsed:.2?}"
    );
}

#[test]
fn criterion_09_training_determinism() {
    let corpus = generate(50, 3);
    let dev = generate(10, 4);
    let config = TrainConfig {
        epochs: 3,
        hidden_dim: 8,
        embed_dim: 8,
        ..TrainConfig::defaults_for(Architecture::BilstmCrf)
    };
    let run = || {
        let (params, log) = train(&corpus, Some(&dev), &config, EmbeddingSource::Trainable).unwrap();
        (to_bytes(&params), format_epoch_log(&log))
    };
    let (bytes_a, log_a) = run();
    let (bytes_b, log_b) = run();
    assert_eq!(bytes_a, bytes_b, "model bytes differ between identical runs");
    assert_eq!(log_a, log_b, "epoch logs differ between identical runs");
    println!(
        "criterion 9: PASS - identical seed/config/data give byte-identical models and logs \
         (single-threaded trainer, so worker count cannot influence results)"
    );
}

#[test]
fn criterion_10_report_pipeline_without_score_claims() {
    // Benchmark-scale scores require a fine-tuned contextual encoder and
    // labels that are not distributed, so no absolute figure is asserted.
    // What is asserted: the toolkit consumes task-formatted data plus
    // precomputed embeddings end to end and emits well-formed reports.
    let conll = "\
# id t1
Malmoe NNP B-LOC
hosted VBD O
Among NNP B-CW
Us NNP I-CW

# id t2
Rivera NNP B-PER
left VBD O
Inter NNP B-CORP
";
    let vocab = LabelVocab::full();
    let corpus = seqtag::corpus::parse_conll(conll, &vocab).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut emb = String::from("dim=4\n");
    for s in &corpus {
        emb.push_str(&format!("# id {}\n", s.id.as_ref().unwrap()));
        for _ in 0..s.len() {
            let row: Vec<String> = (0..4)
                .map(|_| format!("{:.3}", rng.random_range(-1.0..1.0)))
                .collect();
            emb.push_str(&row.join(" "));
            emb.push('\n');
        }
        emb.push('\n');
    }
    let provider = parse_embeddings(&emb).unwrap();

    let config = TrainConfig {
        epochs: 2,
        hidden_dim: 4,
        ..TrainConfig::defaults_for(Architecture::Crf)
    };
    let (params, _) = train(
        &corpus,
        None,
        &config,
        EmbeddingSource::Precomputed(provider),
    )
    .unwrap();
    let preds: Vec<Vec<String>> = corpus
        .iter()
        .map(|s| decode_sentence(&params, s).unwrap())
        .collect();
    for tags in &preds {
        assert!(validate_bio(tags, &vocab).unwrap().is_empty());
    }
    let report = format_report(&score_sentences(&corpus, &preds, &vocab).unwrap());

    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0], "class\tprec\trec\tf1");
    assert_eq!(lines[7].split('\t').next(), Some("average"));
    let expected_order: Vec<String> = EntityType::ALL.iter().map(|t| t.to_string()).collect();
    for (line, class) in lines[1..7].iter().zip(&expected_order) {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[0], class);
        for v in &fields[1..] {
            let parsed: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&parsed));
        }
    }
    println!(
        "criterion 10: PASS - precomputed-embedding pipeline emits well-formed reports on \
         task-formatted files; no benchmark score is claimed at this scale"
    );
}
