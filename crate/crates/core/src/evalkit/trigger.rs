use serde::Serialize;

use crate::error::{Error, Result};

use super::RankedGroup;

/// Answer-triggering outcome at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TriggerResult {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predictions: usize,
    pub correct: usize,
    pub answerable: usize,
}

/// A question is answered with its top candidate iff that score exceeds
/// `threshold`; the answer is correct iff the candidate is relevant.
pub fn trigger_eval(groups: &[RankedGroup], threshold: f64) -> TriggerResult {
    let (mut predictions, mut correct, mut answerable) = (0, 0, 0);
    for g in groups {
        answerable += g.has_positive() as usize;
        let top = g.top();
        if top.score > threshold {
            predictions += 1;
            correct += top.relevant as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(correct, predictions);
    let recall = ratio(correct, answerable);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    TriggerResult {
        threshold,
        precision,
        recall,
        f1,
        predictions,
        correct,
        answerable,
    }
}

/// Best-F1 threshold over the dev questions' top scores plus ±∞. Ties go to
/// the lowest threshold.
pub fn tune_threshold(dev: &[RankedGroup]) -> Result<TriggerResult> {
    if dev.is_empty() {
        return Err(Error::EmptyInput("tune_threshold"));
    }
    let mut candidates: Vec<f64> = dev.iter().map(|g| g.top().score).collect();
    candidates.push(f64::NEG_INFINITY);
    candidates.push(f64::INFINITY);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best: Option<TriggerResult> = None;
    for t in candidates {
        let r = trigger_eval(dev, t);
        if best.is_none_or(|b| r.f1 > b.f1) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least the sentinels were tried"))
}

/// Keeps only questions with at least one relevant candidate.
pub fn answerable_only(groups: &[RankedGroup]) -> Vec<RankedGroup> {
    groups.iter().filter(|g| g.has_positive()).cloned().collect()
}
