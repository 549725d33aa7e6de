use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{DatasetSplit, QuestionGroup, SplitName};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::numkit::{Rng, Scalar};
use crate::trainer::{score_split, train, ModelConfig};

use super::{map, MetricOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct KFoldOptions {
    /// Tensor slice counts to compare.
    pub k_values: Vec<usize>,
    pub folds: usize,
    /// Seed of the fold assignment (training uses the config's seed).
    pub seed: u64,
    /// Upper bound on concurrently trained folds.
    pub jobs: usize,
}

impl Default for KFoldOptions {
    fn default() -> Self {
        KFoldOptions {
            k_values: vec![1, 2, 4],
            folds: 10,
            seed: 1,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KFoldRun {
    pub k: usize,
    pub fold: usize,
    /// Held-out MAP, absent when the run failed.
    pub map: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

/// Spread of the held-out MAPs for one `k`. Both readings of a "deviation
/// range" are given: largest distance from the mean, and max − min.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KFoldSummary {
    pub k: usize,
    pub maps: Vec<f64>,
    pub mean: f64,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
    pub range: f64,
    pub rel_range: f64,
}

impl KFoldSummary {
    pub fn from_maps(k: usize, maps: Vec<f64>) -> Self {
        let n = maps.len().max(1) as f64;
        let mean = maps.iter().sum::<f64>() / n;
        let max_abs_deviation = maps.iter().map(|m| (m - mean).abs()).fold(0.0, f64::max);
        let lo = maps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = maps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if maps.is_empty() { 0.0 } else { hi - lo };
        let rel = |x: f64| if mean > 0.0 { x / mean } else { 0.0 };
        KFoldSummary {
            k,
            mean,
            max_abs_deviation,
            max_rel_deviation: rel(max_abs_deviation),
            range,
            rel_range: rel(range),
            maps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KFoldReport {
    pub folds: usize,
    pub fold_seed: u64,
    pub config: Vec<(String, String)>,
    pub runs: Vec<KFoldRun>,
    pub summaries: Vec<KFoldSummary>,
}

impl KFoldReport {
    pub fn summary(&self, k: usize) -> Option<&KFoldSummary> {
        self.summaries.iter().find(|s| s.k == k)
    }

    /// Whether `k = a` spread (max − min) is at most that of `k = b`.
    pub fn spread_at_most(&self, a: usize, b: usize) -> Option<bool> {
        Some(self.summary(a)?.range <= self.summary(b)?.range)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# folds\t{}\n# fold_seed\t{}", self.folds, self.fold_seed);
        for (k, v) in &self.config {
            let _ = writeln!(s, "# config.{k}\t{v}");
        }
        let _ = writeln!(s, "k\tfold\tmap\tepochs");
        for r in &self.runs {
            let map = r.map.map(|m| m.to_string()).unwrap_or_else(|| format!("error: {}", r.error.as_deref().unwrap_or("")));
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.k, r.fold, map, r.epochs);
        }
        let _ = writeln!(s, "k\tmean\tmax_abs_dev\tmax_rel_dev\trange\trel_range");
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                m.k, m.mean, m.max_abs_deviation, m.max_rel_deviation, m.range, m.rel_range
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Fold index of each question: a seeded shuffle dealt round-robin, so fold
/// sizes differ by at most one.
pub fn fold_assignment(questions: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config("folds must be at least 2".into()));
    }
    if questions < folds {
        return Err(Error::Config(format!("{questions} questions cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..questions).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut out = vec![0; questions];
    for (pos, &q) in order.iter().enumerate() {
        out[q] = pos % folds;
    }
    Ok(out)
}

/// For each `k`, trains on all folds but one (no dev split, so each run
/// lasts `max_epochs`) and measures MAP on the held-out fold. A failing run
/// is recorded with its error and left out of the summary.
pub fn kfold_variance<T: Scalar>(
    questions: &[QuestionGroup],
    base: &ModelConfig,
    store: &EmbeddingStore<T>,
    features: &FeatureTable,
    opts: &KFoldOptions,
) -> Result<KFoldReport> {
    if opts.k_values.is_empty() {
        return Err(Error::Config("no k values given".into()));
    }
    let assignment = fold_assignment(questions.len(), opts.folds, opts.seed)?;
    let split_of = |fold: usize, held_out: bool| DatasetSplit {
        name: if held_out { SplitName::Test } else { SplitName::Train },
        groups: questions
            .iter()
            .zip(&assignment)
            .filter(|(_, &f)| (f == fold) == held_out)
            .map(|(g, _)| g.clone())
            .collect(),
    };
    let tasks: Vec<(usize, usize)> = opts
        .k_values
        .iter()
        .flat_map(|&k| (0..opts.folds).map(move |f| (k, f)))
        .collect();

    let run = |&(k, fold): &(usize, usize)| -> KFoldRun {
        let config = ModelConfig { k, ..base.clone() };
        let result = train(config, store, &split_of(fold, false), None, features).and_then(|out| {
            let groups = score_split(&out.state, store, &split_of(fold, true), features)?;
            Ok((map::<f64>(&groups, MetricOptions::default())?, out.reports.len()))
        });
        match result {
            Ok((m, epochs)) => KFoldRun { k, fold, map: Some(m), epochs, error: None },
            Err(e) => KFoldRun { k, fold, map: None, epochs: 0, error: Some(e.to_string()) },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<KFoldRun> = pool.install(|| tasks.par_iter().map(run).collect());

    let summaries = opts
        .k_values
        .iter()
        .map(|&k| KFoldSummary::from_maps(k, runs.iter().filter(|r| r.k == k).filter_map(|r| r.map).collect()))
        .collect();
    Ok(KFoldReport {
        folds: opts.folds,
        fold_seed: opts.seed,
        config: base.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        runs,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = fold_assignment(23, 5, 9).unwrap();
        assert_eq!(a, fold_assignment(23, 5, 9).unwrap());
        assert_ne!(a, fold_assignment(23, 5, 10).unwrap());
        let mut sizes = [0; 5];
        a.iter().for_each(|&f| sizes[f] += 1);
        assert!(sizes.iter().all(|&s| s == 4 || s == 5));
        assert!(fold_assignment(10, 1, 0).is_err());
        assert!(fold_assignment(3, 4, 0).is_err());
    }

    #[test]
    fn spread_summary() {
        let s = KFoldSummary::from_maps(1, vec![0.5, 0.7, 0.6]);
        assert!((s.mean - 0.6).abs() < 1e-12);
        assert!((s.max_abs_deviation - 0.1).abs() < 1e-12);
        assert!((s.range - 0.2).abs() < 1e-12);
        assert!((s.rel_range - 0.2 / 0.6).abs() < 1e-12);
    }
}
