use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};

use super::CorpusStats;

/// The seven vector measures, in manifest order.
pub const MEASURES: [&str; 7] = ["cosine", "manhattan", "jaccard", "canberra", "euclidean", "minkowski3", "braycurtis"];

/// Sentence-vector constructions, in manifest order.
pub const CONSTRUCTIONS: [&str; 5] = ["mean", "secondary", "idf_mean", "max", "content_mean"];

/// Cosine, Manhattan, sign-pattern Jaccard, Canberra, Euclidean,
/// Minkowski (p = 3) and Bray–Curtis between two vectors.
pub fn neural_features(u: &[f64], v: &[f64]) -> Result<[f64; 7]> {
    if u.len() != v.len() {
        return Err(Error::shape("neural_features", &[u.len()], &[v.len()]));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    let (mut l1, mut l2, mut l3, mut canberra, mut sum_abs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in u.iter().zip(v) {
        dot += x * y;
        nu += x * x;
        nv += y * y;
        let d = (x - y).abs();
        l1 += d;
        l2 += d * d;
        l3 += d * d * d;
        let den = x.abs() + y.abs();
        if den > 0.0 {
            canberra += d / den;
        }
        sum_abs += (x + y).abs();
        let (a, b) = (x > 0.0, y > 0.0);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    let cosine = if nu == 0.0 || nv == 0.0 {
        1.0
    } else {
        1.0 - dot / (nu.sqrt() * nv.sqrt())
    };
    let jaccard = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
    let braycurtis = if sum_abs == 0.0 { 1.0 } else { l1 / sum_abs };
    Ok([cosine, l1, jaccard, canberra, l2.sqrt(), l3.cbrt(), braycurtis])
}

fn mean_of(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for r in rows {
        out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
    }
    let n = rows.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Builds one sentence vector per construction for a token sequence.
pub fn sentence_vectors<S: AsRef<str>>(
    tokens: &[S],
    primary: &EmbeddingStore<f64>,
    secondary: Option<&EmbeddingStore<f64>>,
    stats: &CorpusStats,
) -> Result<[Vec<f64>; 5]> {
    let dim = primary.dim();
    let rows: Vec<Vec<f64>> = tokens.iter().map(|t| primary.lookup(t.as_ref()).into_data()).collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput("sentence_vectors"));
    }
    let mean = mean_of(&rows, dim);

    let second = match secondary {
        Some(store) => store.sentence_vector(tokens)?.into_data(),
        None => {
            let unit: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 0.0 { r.iter().map(|v| v / n).collect() } else { r.clone() }
                })
                .collect();
            mean_of(&unit, dim)
        }
    };

    let mut idf_mean = vec![0.0; dim];
    let mut wsum = 0.0;
    for (t, r) in tokens.iter().zip(&rows) {
        let w = stats.idf(t.as_ref());
        wsum += w;
        idf_mean.iter_mut().zip(r).for_each(|(o, v)| *o += w * v);
    }
    idf_mean.iter_mut().for_each(|o| *o /= wsum);

    let mut max = rows[0].clone();
    for r in &rows[1..] {
        max.iter_mut().zip(r).for_each(|(m, &v)| *m = m.max(v));
    }

    let content: Vec<Vec<f64>> = tokens
        .iter()
        .zip(&rows)
        .filter(|(t, _)| t.as_ref().chars().count() > 3)
        .map(|(_, r)| r.clone())
        .collect();
    let content_mean = if content.is_empty() { mean.clone() } else { mean_of(&content, dim) };

    Ok([mean, second, idf_mean, max, content_mean])
}
