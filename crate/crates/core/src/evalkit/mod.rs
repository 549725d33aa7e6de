//! Ranking metrics, answer triggering and the k-slice variance study.

mod kfold;
mod metrics;
mod report;
mod trigger;

pub use kfold::{fold_assignment, kfold_variance, KFoldOptions, KFoldReport, KFoldRun, KFoldSummary};
pub use metrics::{
    average_precision, map, mrr, p_at_1, rank_order, ranking_metrics, reciprocal_rank, MetricOptions, RankedGroup,
    RankedPair, RankingMetrics,
};
pub use report::{EvalReport, Metric, QuestionDetail};
pub use trigger::{answerable_only, trigger_eval, tune_threshold, TriggerResult};

use crate::numkit::Rng;

/// Mean MAP over `shuffles` random-score assignments of the same groups.
pub fn random_baseline_map(groups: &[RankedGroup], shuffles: usize, seed: u64) -> crate::Result<f64> {
    let mut rng = Rng::new(seed);
    let mut total = 0.0;
    for _ in 0..shuffles {
        let randomized: Vec<RankedGroup> = groups
            .iter()
            .map(|g| RankedGroup {
                qid: g.qid.clone(),
                pairs: g
                    .pairs
                    .iter()
                    .map(|p| RankedPair {
                        score: rng.uniform(0.0, 1.0),
                        ..p.clone()
                    })
                    .collect(),
            })
            .collect();
        total += map::<f64>(&randomized, MetricOptions::default())?;
    }
    Ok(total / shuffles.max(1) as f64)
}
