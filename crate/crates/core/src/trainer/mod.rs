//! Model assembly, objective, Adam training with early stopping, and the
//! model file.

mod config;
mod io;
mod model;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

pub use config::{ModelConfig, ARCHITECTURE_KEYS};
pub use io::{from_bytes, load_compatible, load_model, save_model, to_bytes, SavedModel, FORMAT_VERSION};
pub use model::{
    cross_entropy, ForwardCache, GradCheckModel, Gradients, LossBreakdown, ModelParams, ModelState, TrainItem,
    REGULARIZED, S_CLAMP,
};

use crate::corpus::{DatasetSplit, QAExample};
use crate::embeddings::EmbeddingStore;
use crate::error::{Checkpoint, Error, Result};
use crate::evalkit::{ranking_metrics, MetricOptions, RankedGroup, RankedPair};
use crate::features::{FeatureScaler, FeatureTable};
use crate::numkit::{adam_update, AdamState, Rng, Scalar, Tensor};

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's examples (penalty excluded).
    pub train_loss: f64,
    pub dev_map: Option<f64>,
    pub dev_mrr: Option<f64>,
    pub seconds: f64,
}

impl EpochReport {
    /// Same report with the wall time zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        EpochReport { seconds: 0.0, ..self.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Best-dev state, or the final state when there is no dev split.
    pub state: ModelState<T>,
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Feature row for `ex`, or a contract error naming the pair.
pub fn features_for<'t>(table: &'t FeatureTable, ex: &QAExample) -> Result<&'t [f64]> {
    table
        .get(&ex.qid, &ex.aid)
        .ok_or_else(|| Error::Contract(format!("no cached features for {}/{}", ex.qid, ex.aid)))
}

/// Scores every pair of `split` in evaluation mode.
pub fn score_split<T: Scalar>(
    state: &ModelState<T>,
    store: &EmbeddingStore<T>,
    split: &DatasetSplit,
    features: &FeatureTable,
) -> Result<Vec<RankedGroup>> {
    split
        .groups
        .par_iter()
        .map(|g| {
            let pairs = g
                .examples
                .iter()
                .map(|ex| {
                    let s = state.score(store, ex, features_for(features, ex)?)?;
                    Ok(RankedPair {
                        aid: ex.aid.clone(),
                        score: s.as_f64(),
                        relevant: ex.is_relevant(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            RankedGroup::new(&g.qid, pairs)
        })
        .collect()
}

/// Adam moments for the dense tensors plus lazily-updated embedding rows.
struct Optimizer<T> {
    dense: Vec<AdamState<T>>,
    embeddings: Option<AdamState<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    fn new(params: &ModelParams<T>, lr: f64) -> Self {
        let mut dense = Vec::new();
        let mut embeddings = None;
        for (name, t) in params.named() {
            if name == "embeddings" {
                embeddings = Some(AdamState::new(t.shape(), lr));
            } else {
                dense.push(AdamState::new(t.shape(), lr));
            }
        }
        Optimizer { dense, embeddings, steps: 0 }
    }

    fn step(&mut self, params: &mut ModelParams<T>, grads: &Gradients<T>) -> Result<()> {
        self.steps += 1;
        let grad_tensors: Vec<(String, Tensor<T>)> = grads
            .dense
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let mut dense_states = self.dense.iter_mut();
        for (name, value) in params.named_mut() {
            if name == "embeddings" {
                let st = self.embeddings.as_mut().expect("embedding optimizer state");
                lazy_rows(value, &grads.embedding_rows, st, self.steps);
                continue;
            }
            let g = &grad_tensors.iter().find(|(n, _)| *n == name).expect("gradient per parameter").1;
            adam_update(&name, value, g, dense_states.next().expect("state per parameter"))?;
        }
        Ok(())
    }
}

/// Adam on the touched rows only; untouched rows keep their moments.
fn lazy_rows<T: Scalar>(value: &mut Tensor<T>, rows: &BTreeMap<usize, Vec<T>>, st: &mut AdamState<T>, t: u64) {
    let t = t as i32;
    let (b1, b2) = (T::lit(st.beta1), T::lit(st.beta2));
    let c1 = T::one() - T::lit(st.beta1.powi(t));
    let c2 = T::one() - T::lit(st.beta2.powi(t));
    let (lr, eps) = (T::lit(st.learning_rate), T::lit(st.epsilon));
    for (&r, g) in rows {
        let m = st.m.row_mut(r);
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
        }
        let v = st.v.row_mut(r);
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
        }
        let (m, v) = (st.m.row(r).to_vec(), st.v.row(r).to_vec());
        for ((theta, mi), vi) in value.row_mut(r).iter_mut().zip(m).zip(v) {
            *theta -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
}

fn collect_items<'a>(split: &'a DatasetSplit, table: &'a FeatureTable) -> Result<Vec<(&'a QAExample, &'a [f64])>> {
    split
        .groups
        .iter()
        .flat_map(|g| &g.examples)
        .map(|ex| Ok((ex, features_for(table, ex)?)))
        .collect()
}

/// Trains from scratch. Feature standardization (when enabled) is fitted on
/// the train split only.
pub fn train<T: Scalar>(
    config: ModelConfig,
    store: &EmbeddingStore<T>,
    train_split: &DatasetSplit,
    dev_split: Option<&DatasetSplit>,
    features: &FeatureTable,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if features.names.len() != config.features {
        return Err(Error::Dimension {
            expected: config.features,
            found: features.names.len(),
        });
    }
    let items = collect_items(train_split, features)?;
    if items.is_empty() {
        return Err(Error::EmptyInput("train"));
    }
    let mut state = ModelState::init(config.clone(), store, &features.manifest_hash)?;
    if config.standardize_features {
        state.scaler = FeatureScaler::fit(items.iter().map(|(_, f)| *f))?;
    }
    let mut optimizer = Optimizer::new(&state.params, config.lr);
    let mut order: Vec<usize> = (0..items.len()).collect();

    let mut reports = Vec::new();
    let mut best: Option<(f64, ModelState<T>, usize)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        Rng::derive(config.seed, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<TrainItem<'_>> = chunk
                .iter()
                .enumerate()
                .map(|(i, &idx)| TrainItem {
                    example: items[idx].0,
                    features: items[idx].1,
                    stream: ((epoch as u64) << 40) | ((b * config.batch_size + i) as u64),
                })
                .collect();
            let mut grads = Gradients::zeros(&state.params);
            let diverged = |example: String, state: &ModelState<T>| Error::Diverged {
                epoch,
                example,
                checkpoint: Checkpoint(to_bytes(state, &BTreeMap::new())),
            };
            let loss = match state.batch_loss(store, &batch, true, Some(&mut grads)) {
                Ok(l) if l.total.is_finite() => l,
                Ok(_) => return Err(diverged(batch_label(&batch), &state)),
                Err(Error::NonFinite(msg)) => return Err(diverged(msg, &state)),
                Err(e) => return Err(e),
            };
            if let Some(name) = grads.is_finite() {
                return Err(diverged(format!("{} (gradient of {name})", batch_label(&batch)), &state));
            }
            loss_sum += loss.data * batch.len() as f64;
            optimizer.step(&mut state.params, &grads)?;
        }
        let train_loss = loss_sum / items.len() as f64;

        let dev_metrics = match dev_split {
            Some(dev) if !dev.groups.is_empty() => {
                let groups = score_split(&state, store, dev, features)?;
                Some(ranking_metrics(&groups, MetricOptions::default())?)
            }
            _ => None,
        };
        let report = EpochReport {
            epoch,
            train_loss,
            dev_map: dev_metrics.as_ref().map(|m| m.map),
            dev_mrr: dev_metrics.as_ref().map(|m| m.mrr),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.5}{}",
            report.dev_map.map(|m| format!(", dev MAP {m:.4}")).unwrap_or_default()
        );
        reports.push(report);

        if let Some(m) = dev_metrics {
            if best.as_ref().is_none_or(|(b, _, _)| m.map > *b) {
                best = Some((m.map, state.clone(), epoch));
                stale = 0;
            } else {
                stale += 1;
            }
            if stale >= config.patience || config.patience == 0 {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }

    let (state, best_epoch) = match best {
        Some((_, s, e)) => (s, e),
        None => (state, reports.len()),
    };
    Ok(TrainOutcome {
        state,
        reports,
        best_epoch,
        stopped_early,
    })
}

fn batch_label(batch: &[TrainItem<'_>]) -> String {
    let ex = batch[0].example;
    format!("batch starting at {}/{}", ex.qid, ex.aid)
}
