use std::collections::BTreeMap;

use rtm_core::attention::{attended_pool, attention_weights, phrase_scores, token_scores, AttentionMode};
use rtm_core::encoder::{bilstm_forward, pool, Pooling};
use rtm_core::features::{normalize_features, FeatureScaler};
use rtm_core::interaction::{classify, merge, tsim};
use rtm_core::numkit::Activation;
use rtm_core::synthetic::{
    model_grad_check, separable_task, tiny_config, SyntheticSpec, SyntheticTask, GRAD_CHECK_EPS, GRAD_CHECK_TOLERANCE,
};
use rtm_core::trainer::{
    cross_entropy, from_bytes, load_compatible, load_model, save_model, score_split, to_bytes, train, Gradients,
    ModelConfig, ModelParams, ModelState, TrainItem, REGULARIZED,
};
use rtm_core::Error;

fn task() -> SyntheticTask {
    separable_task(&SyntheticSpec::default()).unwrap()
}

fn fresh(task: &SyntheticTask, config: ModelConfig) -> ModelState<f64> {
    ModelState::init(config, &task.store, &task.features.manifest_hash).unwrap()
}

fn quick_config() -> ModelConfig {
    ModelConfig {
        lr: 1e-2,
        batch_size: 8,
        max_epochs: 3,
        ..tiny_config(AttentionMode::Phrase, Pooling::Max, 1)
    }
}

#[test]
fn zero_network_scores_one_half() {
    let t = task();
    let config = tiny_config(AttentionMode::Token, Pooling::Average, 2);
    let mut state = fresh(&t, config.clone());
    state.params = ModelParams::zeros(&config, None).unwrap();
    for ex in t.corpus.train.examples().take(8) {
        let s = state.score(&t.store, ex, t.features.get(&ex.qid, &ex.aid).unwrap()).unwrap();
        assert_eq!(s, 0.5);
    }
}

#[test]
fn evaluation_forward_is_pure() {
    let t = task();
    let state = fresh(&t, quick_config());
    let ex = t.corpus.dev.examples().next().unwrap();
    let f = t.features.get(&ex.qid, &ex.aid).unwrap();
    let a = state.score(&t.store, ex, f).unwrap();
    let b = state.score(&t.store, ex, f).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn forward_matches_module_composition() {
    let t = task();
    for mode in [AttentionMode::Phrase, AttentionMode::Token] {
        for pooling in [Pooling::Max, Pooling::Average] {
            let mut state = fresh(&t, tiny_config(mode, pooling, 2));
            state.scaler = FeatureScaler::fit(t.features.iter().map(|(_, _, v)| v)).unwrap();
            let cfg = state.config.clone();
            let p = &state.params;
            for ex in t.corpus.train.examples().take(4) {
                let raw = t.features.get(&ex.qid, &ex.aid).unwrap();
                let hq = bilstm_forward(&t.store.embed_sequence(&ex.question_tokens).unwrap(), &p.encoder_q).unwrap().0.states;
                let ha = bilstm_forward(&t.store.embed_sequence(&ex.answer_tokens).unwrap(), &p.encoder_q).unwrap().0.states;
                let c_q = pool(&hq, pooling).unwrap().into_data();
                let scores = match mode {
                    AttentionMode::Phrase => phrase_scores(&ha, &c_q, &p.attention).unwrap(),
                    AttentionMode::Token => token_scores(&ha, &hq, &p.attention, cfg.token_alignment).unwrap(),
                };
                let w = attention_weights(&scores, &p.attention, cfg.attention_norm).unwrap();
                let c_a = attended_pool(&ha, &w, pooling).unwrap().into_data();
                let c_ext = normalize_features(&state.scaler.apply(raw), &p.feature_norm).unwrap().into_data();
                let ts = tsim(&c_q, &c_a, &c_ext, &p.tensors, Activation::Tanh).unwrap();
                let h = merge(&c_q, [ts.qa(), ts.q_ext(), ts.a_ext()], &c_a);
                assert_eq!(h.len(), cfg.merge_width());
                let expected = classify(&h, &p.classifier, Activation::Tanh, None).unwrap();
                let got = state.score(&t.store, ex, raw).unwrap();
                assert!((got - expected).abs() < 1e-12, "{mode}/{pooling}: {got} vs {expected}");
            }
        }
    }
}

#[test]
fn cross_entropy_analytic_values() {
    // The clamp at 1 - 1e-12 leaves a residue of about 1e-12.
    assert!(cross_entropy(1.0f64, 1.0).0.abs() < 1e-11);
    assert!((cross_entropy(0.5f64, 1.0).0 - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((cross_entropy(0.5f64, 0.0).0 - std::f64::consts::LN_2).abs() < 1e-12);
    // Clamped: finite loss and zero slope.
    let (l, ds) = cross_entropy(0.0f64, 1.0);
    assert!((l - 1e-12f64.ln().abs()).abs() < 1e-6);
    assert_eq!(ds, 0.0);
    let (_, ds) = cross_entropy(0.25f64, 1.0);
    assert!((ds + 4.0).abs() < 1e-12);
}

#[test]
fn batch_loss_of_zero_network_is_ln2() {
    let t = task();
    let mut config = quick_config();
    config.lambda = 0.0;
    let mut state = fresh(&t, config.clone());
    state.params = ModelParams::zeros(&config, None).unwrap();
    let ex = t.corpus.train.examples().find(|e| e.is_relevant()).unwrap();
    let item = TrainItem {
        example: ex,
        features: t.features.get(&ex.qid, &ex.aid).unwrap(),
        stream: 0,
    };
    let loss = state.batch_loss(&t.store, &[item], false, None).unwrap();
    assert!((loss.total - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(state.batch_loss(&t.store, &[], false, None).is_err());
}

#[test]
fn penalties_are_separate_terms_and_increase_the_loss() {
    let t = task();
    let mut config = tiny_config(AttentionMode::Phrase, Pooling::Max, 4);
    config.lambda = 1e-3;
    let state = fresh(&t, config.clone());
    let items: Vec<TrainItem<'_>> = t
        .corpus
        .train
        .examples()
        .take(6)
        .map(|ex| TrainItem {
            example: ex,
            features: t.features.get(&ex.qid, &ex.aid).unwrap(),
            stream: 0,
        })
        .collect();
    let with = state.batch_loss(&t.store, &items, false, None).unwrap();
    let names: Vec<&str> = with.penalties.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, REGULARIZED);
    for (r, m) in state.params.tensors.m.iter().enumerate() {
        let oracle: f64 = m.data().iter().map(|v| v * v).sum::<f64>() * 1e-3;
        let (name, got) = &with.penalties[2 + r];
        assert_eq!(name, &format!("tensor.M{}", r + 1));
        assert!((got - oracle).abs() < 1e-15 * oracle.max(1.0));
    }

    let mut zero = state.clone();
    zero.config.lambda = 0.0;
    let without = zero.batch_loss(&t.store, &items, false, None).unwrap();
    assert_eq!(with.data, without.data);
    assert!(with.total > without.total);
    assert!(without.penalties.iter().all(|(_, v)| *v == 0.0));
}

#[test]
fn gradient_check_passes_on_representative_configs() {
    let mut configs = vec![
        tiny_config(AttentionMode::Phrase, Pooling::Max, 1),
        tiny_config(AttentionMode::Token, Pooling::Average, 2),
    ];
    let mut untied = tiny_config(AttentionMode::Token, Pooling::Max, 1);
    untied.tie_encoders = false;
    configs.push(untied);
    let mut tuned = tiny_config(AttentionMode::Phrase, Pooling::Average, 1);
    tuned.train_embeddings = true;
    configs.push(tuned);
    for cfg in configs {
        let blocks = model_grad_check(&cfg, GRAD_CHECK_EPS, None).unwrap();
        for b in &blocks {
            assert!(b.passed(GRAD_CHECK_TOLERANCE), "{cfg:?}: {b:?}");
        }
        let names: Vec<&str> = blocks.iter().map(|b| b.block.as_str()).collect();
        if !cfg.tie_encoders {
            assert!(names.contains(&"encoder_q") && names.contains(&"encoder_a"));
        }
        if cfg.train_embeddings {
            assert!(names.contains(&"embeddings"));
        }
    }
}

#[test]
fn gradient_check_names_a_corrupted_block() {
    let cfg = tiny_config(AttentionMode::Phrase, Pooling::Average, 1);
    let blocks = model_grad_check(&cfg, GRAD_CHECK_EPS, Some("attention")).unwrap();
    let failed: Vec<&str> = blocks
        .iter()
        .filter(|b| !b.passed(GRAD_CHECK_TOLERANCE))
        .map(|b| b.block.as_str())
        .collect();
    assert_eq!(failed, ["attention"]);
    assert!(model_grad_check(&cfg, GRAD_CHECK_EPS, Some("nonexistent")).is_err());
}

#[test]
fn l2_gradient_is_two_lambda_theta() {
    let t = task();
    let mut config = quick_config();
    config.lambda = 0.5;
    let state = fresh(&t, config);
    let ex = t.corpus.train.examples().next().unwrap();
    let item = TrainItem {
        example: ex,
        features: t.features.get(&ex.qid, &ex.aid).unwrap(),
        stream: 0,
    };
    let mut with = Gradients::zeros(&state.params);
    state.batch_loss(&t.store, &[item], false, Some(&mut with)).unwrap();
    let mut zero = state.clone();
    zero.config.lambda = 0.0;
    let mut without = Gradients::zeros(&state.params);
    zero.batch_loss(&t.store, &[item], false, Some(&mut without)).unwrap();
    for name in REGULARIZED {
        let a = with.dense_for(name, &state.params);
        let b = without.dense_for(name, &state.params);
        let theta = state.params.named().into_iter().find(|(n, _)| n == name).unwrap().1;
        for ((x, y), v) in a.data().iter().zip(b.data()).zip(theta.data()) {
            assert!((x - y - v).abs() < 1e-12, "{name}");
        }
    }
    // Unregularized tensors are untouched by λ.
    let a = with.dense_for("attention.W_aw", &state.params);
    let b = without.dense_for("attention.W_aw", &state.params);
    assert_eq!(a, b);
}

#[test]
fn patience_zero_runs_one_epoch() {
    let t = task();
    let config = ModelConfig {
        patience: 0,
        max_epochs: 10,
        ..quick_config()
    };
    let out = train(config.clone(), &t.store, &t.corpus.train, Some(&t.corpus.dev), &t.features).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert_eq!(out.best_epoch, 1);
    assert!(out.reports[0].dev_map.is_some());

    let no_dev = train(config, &t.store, &t.corpus.train, None, &t.features).unwrap();
    assert_eq!(no_dev.reports.len(), 10);
    assert!(no_dev.reports.iter().all(|r| r.dev_map.is_none() && r.train_loss.is_finite()));
}

#[test]
fn early_stopping_keeps_the_best_dev_state() {
    let t = task();
    let config = ModelConfig {
        patience: 2,
        max_epochs: 40,
        ..quick_config()
    };
    let out = train(config, &t.store, &t.corpus.train, Some(&t.corpus.dev), &t.features).unwrap();
    let maps: Vec<f64> = out.reports.iter().map(|r| r.dev_map.unwrap()).collect();
    let best = maps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(maps[out.best_epoch - 1], best);
    assert_eq!(maps.iter().position(|&m| m == best), Some(out.best_epoch - 1));
    if out.stopped_early {
        assert_eq!(out.reports.len(), out.best_epoch + 2);
    }
    let groups = score_split(&out.state, &t.store, &t.corpus.dev, &t.features).unwrap();
    let map = rtm_core::evalkit::map::<f64>(&groups, Default::default()).unwrap();
    assert_eq!(map, best);
}

#[test]
fn training_is_reproducible() {
    let t = task();
    let config = ModelConfig { dropout: 0.4, ..quick_config() };
    let a = train(config.clone(), &t.store, &t.corpus.train, Some(&t.corpus.dev), &t.features).unwrap();
    let b = train(config, &t.store, &t.corpus.train, Some(&t.corpus.dev), &t.features).unwrap();
    let strip = |o: &rtm_core::trainer::TrainOutcome<f64>| o.reports.iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(to_bytes(&a.state, &BTreeMap::new()), to_bytes(&b.state, &BTreeMap::new()));
}

#[test]
fn unfrozen_embeddings_move_only_seen_rows() {
    let t = task();
    let config = ModelConfig {
        train_embeddings: true,
        max_epochs: 2,
        ..quick_config()
    };
    let out = train(config, &t.store, &t.corpus.train, None, &t.features).unwrap();
    let learned = out.state.params.word_vectors.as_ref().unwrap();
    let frozen = t.store.matrix();
    let marker = t.store.index_of(rtm_core::synthetic::MARKER).unwrap();
    assert_ne!(learned.row(marker), frozen.row(marker));
    // Topic words that only occur in the test split keep their vectors.
    let seen: std::collections::HashSet<&str> = t
        .corpus
        .train
        .examples()
        .flat_map(|e| e.question_tokens.iter().chain(&e.answer_tokens))
        .map(String::as_str)
        .collect();
    let unseen = ["kettle", "lantern", "apple"].into_iter().find(|w| !seen.contains(w));
    if let Some(w) = unseen {
        let i = t.store.index_of(w).unwrap();
        assert_eq!(learned.row(i), frozen.row(i));
    }
}

#[test]
fn nan_features_abort_with_last_good_checkpoint() {
    let t = task();
    let mut features = t.features.clone();
    let ex = t.corpus.train.examples().nth(3).unwrap();
    let mut row = features.get(&ex.qid, &ex.aid).unwrap().to_vec();
    row[0] = f64::NAN;
    features.insert(&ex.qid, &ex.aid, row).unwrap();
    let config = ModelConfig {
        standardize_features: false,
        ..quick_config()
    };
    match train(config.clone(), &t.store, &t.corpus.train, None, &features) {
        Err(Error::Diverged { epoch, example, checkpoint }) => {
            assert_eq!(epoch, 1);
            assert!(example.contains(&ex.qid), "{example}");
            let restored = from_bytes::<f64>(&checkpoint.0).unwrap().state;
            assert!(restored.params.named().iter().all(|(_, t)| t.is_finite()));
            assert_eq!(restored.config, config);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn save_load_round_trip_preserves_scores() {
    let spec = SyntheticSpec {
        train_questions: 13,
        ..SyntheticSpec::default()
    };
    let t = separable_task(&spec).unwrap();
    let out = train(quick_config(), &t.store, &t.corpus.train, None, &t.features).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rtm");
    let mut meta = BTreeMap::new();
    meta.insert("note".to_string(), "round trip".to_string());
    save_model(&path, &out.state, &meta).unwrap();
    let back = load_model::<f64>(&path).unwrap();
    assert_eq!(back.state, out.state);
    assert_eq!(back.meta, meta);
    assert_eq!(back.trained_scalar, "f64");

    let fixtures: Vec<_> = t.corpus.train.examples().take(50).collect();
    assert_eq!(fixtures.len(), 50);
    for ex in fixtures {
        let f = t.features.get(&ex.qid, &ex.aid).unwrap();
        let a = out.state.score(&t.store, ex, f).unwrap();
        let b = back.state.score(&t.store, ex, f).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn truncated_or_corrupted_files_are_rejected() {
    let t = task();
    let state = fresh(&t, quick_config());
    let bytes = to_bytes(&state, &BTreeMap::new());
    for cut in [0, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(from_bytes::<f64>(&bytes[..cut]), Err(Error::ModelFormat(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    assert!(matches!(from_bytes::<f64>(&flipped), Err(Error::ModelFormat(_))));
}

#[test]
fn architecture_mismatch_on_load() {
    let t = task();
    let mut config = quick_config();
    config.k = 2;
    let state = fresh(&t, config.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k2.rtm");
    save_model(&path, &state, &BTreeMap::new()).unwrap();
    let mut requested = config.clone();
    requested.k = 1;
    match load_compatible::<f64>(&path, &requested) {
        Err(Error::ConfigMismatch(msg)) => assert!(msg.contains("k: model has 2, requested 1"), "{msg}"),
        other => panic!("expected a config mismatch, got {other:?}"),
    }
    // Optimizer settings may differ.
    requested.k = 2;
    requested.lr = 0.5;
    load_compatible::<f64>(&path, &requested).unwrap();
}

#[test]
fn provenance_is_checked() {
    let t = task();
    let state = fresh(&t, quick_config());
    state.check_provenance(&t.features.manifest_hash, t.store.fingerprint()).unwrap();
    assert!(matches!(state.check_provenance("beef", t.store.fingerprint()), Err(Error::Provenance(_))));
    assert!(matches!(state.check_provenance(&t.features.manifest_hash, "beef"), Err(Error::Provenance(_))));
}

#[test]
fn thirty_two_bit_model_runs() {
    let t = task();
    let rows: Vec<(String, Vec<f32>)> = ["what", "is", "zebra", "river"]
        .iter()
        .map(|w| (w.to_string(), t.store.lookup(w).data().iter().map(|&v| v as f32).collect()))
        .collect();
    let store = rtm_core::embeddings::EmbeddingStore::from_rows(rows, rtm_core::embeddings::OovPolicy::Zeros).unwrap();
    let state = ModelState::<f32>::init(quick_config(), &store, "m").unwrap();
    let ex = t.corpus.train.examples().next().unwrap();
    let s = state.score(&store, ex, t.features.get(&ex.qid, &ex.aid).unwrap()).unwrap();
    assert!(s > 0.0 && s < 1.0);
    let back = from_bytes::<f32>(&to_bytes(&state, &BTreeMap::new())).unwrap();
    assert_eq!(back.trained_scalar, "f32");
    assert_eq!(back.state.params, state.params);
}
