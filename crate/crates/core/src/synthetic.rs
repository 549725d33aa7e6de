//! Small generated tasks and the full-model gradient check.
//!
//! The separable task has one relevant answer per question, and only that
//! answer contains the marker token, whose embedding is far from every
//! other word.

use std::collections::BTreeMap;

use crate::attention::AttentionMode;
use crate::corpus::{Corpus, DatasetSplit, QAExample, QuestionGroup, SplitName};
use crate::embeddings::{EmbeddingStore, OovPolicy};
use crate::encoder::Pooling;
use crate::error::Result;
use crate::features::{build_stats, dataset_hash, FeatureExtractor, FeatureManifest, FeatureTable};
use crate::numkit::{grad_check, Rng};
use crate::trainer::{GradCheckModel, Gradients, ModelConfig, ModelState, TrainItem};

pub const MARKER: &str = "zebra";

const FILLER: [&str; 24] = [
    "the", "river", "bank", "stone", "green", "music", "paper", "light", "window", "city", "road", "winter", "garden",
    "metal", "cloud", "horse", "table", "north", "ocean", "forest", "engine", "silver", "market", "tower",
];

const TOPICS: [&str; 12] = [
    "apple", "bridge", "castle", "desert", "eagle", "falcon", "glacier", "harbor", "island", "jungle", "kettle", "lantern",
];

/// Corpus, word vectors and the default 51-feature table for a generated
/// marker task.
pub struct SyntheticTask {
    pub corpus: Corpus,
    pub store: EmbeddingStore<f64>,
    pub manifest: FeatureManifest,
    pub features: FeatureTable,
}

#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub train_questions: usize,
    pub dev_questions: usize,
    pub test_questions: usize,
    pub candidates: usize,
    pub d_e: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_questions: 10,
            dev_questions: 6,
            test_questions: 6,
            candidates: 4,
            d_e: 8,
            seed: 11,
        }
    }
}

fn vocabulary() -> Vec<&'static str> {
    FILLER.iter().chain(&TOPICS).chain(&["what", "is", "about", MARKER]).copied().collect()
}

/// Word vectors drawn from `U(-0.5, 0.5)`, except the marker, which is a
/// constant `+1` vector.
pub fn synthetic_store(d_e: usize, seed: u64) -> Result<EmbeddingStore<f64>> {
    scaled_store(d_e, seed, 0.5)
}

fn scaled_store(d_e: usize, seed: u64, r: f64) -> Result<EmbeddingStore<f64>> {
    let mut rng = Rng::derive(seed, 0x57);
    let rows = vocabulary()
        .into_iter()
        .map(|w| {
            let v = if w == MARKER {
                vec![1.0; d_e]
            } else {
                (0..d_e).map(|_| rng.uniform(-r, r)).collect()
            };
            (w.to_string(), v)
        })
        .collect();
    EmbeddingStore::from_rows(rows, OovPolicy::Zeros)
}

fn split(name: SplitName, questions: usize, candidates: usize, offset: usize, rng: &mut Rng) -> DatasetSplit {
    let groups = (0..questions)
        .map(|q| {
            let qid = format!("{}{}", name.as_str(), offset + q);
            let topic = TOPICS[(offset + q) % TOPICS.len()];
            let question: Vec<String> = ["what", "is", topic, "about"].iter().map(|s| s.to_string()).collect();
            let relevant = rng.below(candidates);
            let examples = (0..candidates)
                .map(|c| {
                    let len = 4 + rng.below(4);
                    let mut answer: Vec<String> = (0..len).map(|_| FILLER[rng.below(FILLER.len())].to_string()).collect();
                    if rng.bernoulli(0.5) {
                        answer.insert(rng.below(answer.len()), topic.to_string());
                    }
                    if c == relevant {
                        answer.insert(rng.below(answer.len() + 1), MARKER.to_string());
                    }
                    QAExample {
                        qid: qid.clone(),
                        aid: format!("{qid}-a{c}"),
                        question_tokens: question.clone(),
                        answer_tokens: answer,
                        label: (c == relevant) as u8 as f64,
                        answer_sentences: 1,
                    }
                })
                .collect();
            QuestionGroup { qid, examples }
        })
        .collect();
    DatasetSplit { name, groups }
}

pub fn separable_corpus(spec: &SyntheticSpec) -> Corpus {
    let mut rng = Rng::derive(spec.seed, 0xc0);
    let train = split(SplitName::Train, spec.train_questions, spec.candidates, 0, &mut rng);
    let dev = split(SplitName::Dev, spec.dev_questions, spec.candidates, spec.train_questions, &mut rng);
    let test = split(
        SplitName::Test,
        spec.test_questions,
        spec.candidates,
        spec.train_questions + spec.dev_questions,
        &mut rng,
    );
    Corpus {
        train,
        dev,
        test,
        dropped_multi_best: 0,
        skipped: [0; 3],
    }
}

/// Generates the task and extracts its features with statistics from the
/// train split.
pub fn separable_task(spec: &SyntheticSpec) -> Result<SyntheticTask> {
    let corpus = separable_corpus(spec);
    let store = synthetic_store(spec.d_e, spec.seed)?;
    let manifest = FeatureManifest::default_51();
    let stats = build_stats(&corpus.train)?;
    let extractor = FeatureExtractor::new(&manifest, &stats, &store);
    let examples: Vec<&QAExample> = corpus.train.examples().chain(corpus.dev.examples()).chain(corpus.test.examples()).collect();
    let vectors = extractor.extract_all(&examples)?;
    let mut features = FeatureTable::new(&manifest, &dataset_hash(&corpus, &[store.fingerprint()]));
    for (ex, v) in examples.iter().zip(vectors) {
        features.insert(&ex.qid, &ex.aid, v.into_inner())?;
    }
    Ok(SyntheticTask {
        corpus,
        store,
        manifest,
        features,
    })
}

/// Small architecture used by the gradient check and the learning check:
/// `d_e = 8`, `h = 5`, 51 features.
pub fn tiny_config(attention: AttentionMode, pooling: Pooling, k: usize) -> ModelConfig {
    ModelConfig {
        d_e: 8,
        h: 5,
        k,
        attention,
        pooling,
        n_h: 6,
        ..ModelConfig::default()
    }
}

/// Largest relative error within one parameter block (the name prefix
/// before the first `.`).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub block: String,
    pub tensors: usize,
    /// Coordinates compared.
    pub coordinates: usize,
    /// Coordinates left out because `θ ± ε` changed a max-pooling winner,
    /// where the loss is not differentiable.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
}

impl BlockCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Step for the full-model check. Near-zero coordinates are compared against
/// the `1e-8` floor of the relative error, so the central difference must
/// be accurate to about `1e-12` absolute; in `f64` that needs a step well
/// above `1e-5` (roundoff ≈ `ulp(J)/ε`) and well below `1e-3` (truncation).
pub const GRAD_CHECK_EPS: f64 = 3e-4;

/// Generated pairs (question and answer lengths at most 6) with random
/// feature rows.
fn check_pairs(config: &ModelConfig) -> Vec<(QAExample, Vec<f64>)> {
    let mut rng = Rng::derive(config.seed, 0x6c);
    let vocab = vocabulary();
    (0..3)
        .map(|i| {
            let mut words = |n: usize| (0..n).map(|_| vocab[rng.below(vocab.len())].to_string()).collect::<Vec<_>>();
            let ex = QAExample {
                qid: format!("g{i}"),
                aid: format!("g{i}-a"),
                question_tokens: words(3 + i % 2),
                answer_tokens: words(6 - i % 2),
                label: (i != 1) as u8 as f64,
                answer_sentences: 1,
            };
            let feats = (0..config.features).map(|_| rng.uniform(-1.0, 1.0)).collect();
            (ex, feats)
        })
        .collect()
}

/// Finite-difference check of the whole model, dropout off, with a non-zero
/// λ so the penalty gradients are covered. `corrupt` scales the analytic
/// gradient of one block by 1.5 to exercise the failure path.
pub fn model_grad_check(config: &ModelConfig, eps: f64, corrupt: Option<&str>) -> Result<Vec<BlockCheck>> {
    let mut config = config.clone();
    config.dropout = 0.0;
    config.lambda = 1e-2;
    let store = synthetic_store(config.d_e, config.seed)?;
    let pairs = check_pairs(&config);
    let items: Vec<TrainItem<'_>> = pairs
        .iter()
        .enumerate()
        .map(|(i, (ex, f))| TrainItem {
            example: ex,
            features: f,
            stream: i as u64,
        })
        .collect();
    let signature = |m: &ModelState<f64>| -> Result<Vec<usize>> {
        let mut sig = Vec::new();
        for it in &items {
            let ex = it.example;
            sig.extend(m.forward(&store, &ex.question_tokens, &ex.answer_tokens, it.features, None)?.pooling_signature());
        }
        Ok(sig)
    };

    let model = ModelState::init(config, &store, "grad-check")?;
    let base = signature(&model)?;
    let mut grads = Gradients::zeros(&model.params);
    model.batch_loss(&store, &items, false, Some(&mut grads))?;
    let mut harness = GradCheckModel::new(model, &grads);
    if let Some(block) = corrupt {
        if harness.scale_block(block, 1.5) == 0 {
            return Err(crate::Error::Config(format!("no parameter block named `{block}`")));
        }
    }
    // grad_check probes θ+ε then θ−ε for each coordinate in order.
    let mut moved = Vec::new();
    let entries = grad_check(&mut harness, eps, |h: &GradCheckModel<f64>| {
        moved.push(signature(&h.model)? != base);
        Ok(h.model.batch_loss(&store, &items, false, None)?.total)
    })?;

    let mut blocks: BTreeMap<String, BlockCheck> = BTreeMap::new();
    let mut probe = moved.chunks(2);
    for e in entries {
        let block = e.name.split('.').next().unwrap_or(&e.name).to_string();
        let b = blocks.entry(block.clone()).or_insert_with(|| BlockCheck {
            block,
            tensors: 0,
            coordinates: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
            worst_tensor: String::new(),
            worst_index: 0,
        });
        b.tensors += 1;
        for (i, &rel) in e.rel_errors.iter().enumerate() {
            if probe.next().is_some_and(|p| p.iter().any(|&m| m)) {
                b.skipped_kinks += 1;
                continue;
            }
            b.coordinates += 1;
            if rel > b.max_rel_error {
                b.max_rel_error = rel;
                b.worst_tensor = e.name.clone();
                b.worst_index = i;
            }
        }
    }
    Ok(blocks.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_only_in_relevant_answers() {
        let c = separable_corpus(&SyntheticSpec::default());
        assert_eq!(c.train.groups.len(), 10);
        for ex in c.train.examples().chain(c.dev.examples()) {
            assert_eq!(ex.answer_tokens.iter().any(|t| t == MARKER), ex.is_relevant());
        }
        for g in &c.train.groups {
            assert_eq!(g.examples.iter().filter(|e| e.is_relevant()).count(), 1);
        }
    }

    #[test]
    fn task_has_full_feature_table() {
        let t = separable_task(&SyntheticSpec::default()).unwrap();
        assert_eq!(t.features.len(), (10 + 6 + 6) * 4);
        assert_eq!(t.features.names.len(), 51);
    }
}
