use std::cmp::Ordering;

use num_traits::{FromPrimitive, Num};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedPair {
    pub aid: String,
    pub score: f64,
    pub relevant: bool,
}

/// One question's scored candidates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedGroup {
    pub qid: String,
    pub pairs: Vec<RankedPair>,
}

/// Score descending, then `aid` ascending.
pub fn rank_order(a: &RankedPair, b: &RankedPair) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.aid.cmp(&b.aid))
}

impl RankedGroup {
    pub fn new(qid: impl Into<String>, pairs: Vec<RankedPair>) -> Result<Self> {
        let qid = qid.into();
        if pairs.is_empty() {
            return Err(Error::EmptyInput("RankedGroup"));
        }
        if let Some(p) = pairs.iter().find(|p| !p.score.is_finite()) {
            return Err(Error::NonFinite(format!("score of {qid}/{} is {}", p.aid, p.score)));
        }
        Ok(RankedGroup { qid, pairs })
    }

    pub fn has_positive(&self) -> bool {
        self.pairs.iter().any(|p| p.relevant)
    }

    /// Candidates in rank order.
    pub fn ranked(&self) -> Vec<&RankedPair> {
        let mut v: Vec<&RankedPair> = self.pairs.iter().collect();
        v.sort_by(|a, b| rank_order(a, b));
        v
    }

    pub fn top(&self) -> &RankedPair {
        self.pairs
            .iter()
            .min_by(|a, b| rank_order(a, b))
            .expect("groups are non-empty")
    }

    /// 1-based rank of the first relevant candidate.
    pub fn first_positive_rank(&self) -> Option<usize> {
        self.ranked().iter().position(|p| p.relevant).map(|i| i + 1)
    }
}

/// Whether groups without a relevant candidate count towards the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetricOptions {
    pub include_no_positive: bool,
}

fn lit<M: FromPrimitive>(n: usize) -> M {
    M::from_usize(n).expect("count representable in metric type")
}

/// AP of one group; zero when it has no relevant candidate.
pub fn average_precision<M: Num + FromPrimitive + Clone>(group: &RankedGroup) -> M {
    let mut hits = 0;
    let mut total = M::zero();
    for (i, p) in group.ranked().into_iter().enumerate() {
        if p.relevant {
            hits += 1;
            total = total + lit::<M>(hits) / lit::<M>(i + 1);
        }
    }
    if hits == 0 {
        M::zero()
    } else {
        total / lit(hits)
    }
}

pub fn reciprocal_rank<M: Num + FromPrimitive>(group: &RankedGroup) -> M {
    group.first_positive_rank().map_or(M::zero(), |r| M::one() / lit(r))
}

fn mean_over<M, F>(groups: &[RankedGroup], opts: MetricOptions, metric: &str, f: F) -> Result<M>
where
    M: Num + FromPrimitive + Clone,
    F: Fn(&RankedGroup) -> M,
{
    let mut n = 0;
    let mut total = M::zero();
    for g in groups.iter().filter(|g| opts.include_no_positive || g.has_positive()) {
        n += 1;
        total = total + f(g);
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(format!("{metric}: no question with a relevant answer")));
    }
    Ok(total / lit(n))
}

pub fn map<M: Num + FromPrimitive + Clone>(groups: &[RankedGroup], opts: MetricOptions) -> Result<M> {
    mean_over(groups, opts, "MAP", average_precision)
}

pub fn mrr<M: Num + FromPrimitive + Clone>(groups: &[RankedGroup], opts: MetricOptions) -> Result<M> {
    mean_over(groups, opts, "MRR", reciprocal_rank)
}

pub fn p_at_1<M: Num + FromPrimitive + Clone>(groups: &[RankedGroup], opts: MetricOptions) -> Result<M> {
    mean_over(groups, opts, "P@1", |g| if g.top().relevant { M::one() } else { M::zero() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub questions: usize,
}

pub fn ranking_metrics(groups: &[RankedGroup], opts: MetricOptions) -> Result<RankingMetrics> {
    Ok(RankingMetrics {
        map: map(groups, opts)?,
        mrr: mrr(groups, opts)?,
        p_at_1: p_at_1(groups, opts)?,
        questions: groups.iter().filter(|g| opts.include_no_positive || g.has_positive()).count(),
    })
}
