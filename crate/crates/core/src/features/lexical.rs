use std::collections::{HashMap, HashSet};

use super::CorpusStats;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DIRICHLET_MU: f64 = 2000.0;

/// Lexical and IR scores of one pair, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct LexicalFeatures {
    pub q_len: f64,
    pub a_len: f64,
    pub overlap: f64,
    pub overlap_ratio: f64,
    pub exact_match: f64,
    pub idf_overlap: f64,
    pub bm25: f64,
    pub lm_dirichlet: f64,
}

impl LexicalFeatures {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("q_len", self.q_len),
            ("a_len", self.a_len),
            ("overlap", self.overlap),
            ("overlap_ratio", self.overlap_ratio),
            ("exact_match", self.exact_match),
            ("idf_overlap", self.idf_overlap),
            ("bm25", self.bm25),
            ("lm_dirichlet", self.lm_dirichlet),
        ]
    }
}

fn term_counts<S: AsRef<str>>(tokens: &[S]) -> HashMap<&str, usize> {
    let mut tf = HashMap::new();
    for t in tokens {
        *tf.entry(t.as_ref()).or_insert(0) += 1;
    }
    tf
}

/// Whether `q` occurs as a contiguous run inside `a`.
pub fn contains_run<S: AsRef<str>>(a: &[S], q: &[S]) -> bool {
    !q.is_empty() && a.windows(q.len()).any(|w| w.iter().zip(q).all(|(x, y)| x.as_ref() == y.as_ref()))
}

/// BM25 of the query tokens (every occurrence counts) against `a`.
pub fn bm25<S: AsRef<str>>(q: &[S], a: &[S], stats: &CorpusStats) -> f64 {
    let tf = term_counts(a);
    let norm = 1.0 - BM25_B + BM25_B * a.len() as f64 / stats.average_answer_length.max(f64::MIN_POSITIVE);
    q.iter()
        .map(|t| {
            let f = tf.get(t.as_ref()).copied().unwrap_or(0) as f64;
            if f == 0.0 {
                0.0
            } else {
                stats.idf(t.as_ref()) * f * (BM25_K1 + 1.0) / (f + BM25_K1 * norm)
            }
        })
        .sum()
}

/// Dirichlet-smoothed query log-likelihood `Σ_{t∈q} ln p(t|a)`.
pub fn lm_score<S: AsRef<str>>(q: &[S], a: &[S], stats: &CorpusStats) -> f64 {
    let tf = term_counts(a);
    let len = a.len() as f64;
    q.iter()
        .map(|t| {
            let f = tf.get(t.as_ref()).copied().unwrap_or(0) as f64;
            ((f + DIRICHLET_MU * stats.collection_prob(t.as_ref())) / (len + DIRICHLET_MU)).ln()
        })
        .sum()
}

pub fn lexical_features<S: AsRef<str>>(q: &[S], a: &[S], stats: &CorpusStats) -> LexicalFeatures {
    let qs: HashSet<&str> = q.iter().map(AsRef::as_ref).collect();
    let as_: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let common: Vec<&str> = qs.intersection(&as_).copied().collect();
    let union = qs.union(&as_).count();
    LexicalFeatures {
        q_len: q.len() as f64,
        a_len: a.len() as f64,
        overlap: common.len() as f64,
        overlap_ratio: if union == 0 { 0.0 } else { common.len() as f64 / union as f64 },
        exact_match: if contains_run(a, q) { 1.0 } else { 0.0 },
        idf_overlap: common.iter().map(|t| stats.idf(t)).sum(),
        bm25: bm25(q, a, stats),
        lm_dirichlet: lm_score(q, a, stats),
    }
}
