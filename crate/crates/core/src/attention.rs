//! Attention over answer timesteps, conditioned either on the pooled
//! question vector (phrase level) or on aligned question states (token level).

use serde::{Deserialize, Serialize};

use crate::encoder::{pool_backward, pool_forward, PoolCache, Pooling};
use crate::error::{Error, Result};
use crate::numkit::{dot, matvec, matvec_t_acc, outer_acc, softmax, softmax_backward, xavier_uniform, Rng, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub w_aw: Tensor<T>,
    pub w_qw: Tensor<T>,
    pub w_ws: Tensor<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn zeros(d: usize) -> Self {
        AttentionParams {
            w_aw: Tensor::zeros(&[d, d]),
            w_qw: Tensor::zeros(&[d, d]),
            w_ws: Tensor::zeros(&[d]),
        }
    }

    pub fn init(rng: &mut Rng, d: usize) -> Self {
        AttentionParams {
            w_aw: xavier_uniform(rng, &[d, d], d, d),
            w_qw: xavier_uniform(rng, &[d, d], d, d),
            w_ws: xavier_uniform(rng, &[d], d, 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_ws.len()
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("W_aw".into(), &self.w_aw),
            ("W_qw".into(), &self.w_qw),
            ("w_ws".into(), &self.w_ws),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("W_aw".into(), &mut self.w_aw),
            ("W_qw".into(), &mut self.w_qw),
            ("w_ws".into(), &mut self.w_ws),
        ]
    }
}


#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Phrase,
    Token,
}
string_enum!(AttentionMode { Phrase => "phrase", Token => "token" });

/// How attention logits become weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionNorm {
    Softmax,
    /// Unnormalized `exp(ℓ)`.
    RawExp,
}
string_enum!(AttentionNorm { Softmax => "softmax", RawExp => "raw_exp" });

/// Which question state token-level attention pairs with answer step `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenAlignment {
    /// Question state `t`, or zeros past the end of the question.
    Positional,
    /// Mean of all question states at every step.
    Mean,
}
string_enum!(TokenAlignment { Positional => "positional", Mean => "mean" });

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub mode: AttentionMode,
    pub norm: AttentionNorm,
    pub alignment: TokenAlignment,
    pub pooling: Pooling,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            mode: AttentionMode::Phrase,
            norm: AttentionNorm::Softmax,
            alignment: TokenAlignment::Positional,
            pooling: Pooling::Max,
        }
    }
}

fn check_square<T: Scalar>(states: &Tensor<T>, p: &AttentionParams<T>, op: &'static str) -> Result<()> {
    let d = p.dim();
    if states.rank() != 2 || states.shape()[1] != d || p.w_aw.shape() != [d, d] || p.w_qw.shape() != [d, d] {
        return Err(Error::shape(op, states.shape(), &[states.rows(), d]));
    }
    if states.rows() == 0 {
        return Err(Error::EmptyInput(op));
    }
    Ok(())
}

fn affine_rows<T: Scalar>(answer_states: &Tensor<T>, queries: &[Vec<T>], p: &AttentionParams<T>) -> Tensor<T> {
    let d = p.dim();
    let mut out = Tensor::zeros(&[answer_states.rows(), d]);
    for t in 0..answer_states.rows() {
        let a = matvec(p.w_aw.data(), d, answer_states.row(t));
        let q = matvec(p.w_qw.data(), d, &queries[t]);
        for ((o, x), y) in out.row_mut(t).iter_mut().zip(a).zip(q) {
            *o = x + y;
        }
    }
    out
}

/// Rows `W_aw·a(t) + W_qw·c_q`.
pub fn phrase_scores<T: Scalar>(answer_states: &Tensor<T>, c_q: &[T], p: &AttentionParams<T>) -> Result<Tensor<T>> {
    check_square(answer_states, p, "phrase_scores")?;
    if c_q.len() != p.dim() {
        return Err(Error::shape("phrase_scores c_q", &[c_q.len()], &[p.dim()]));
    }
    let queries = vec![c_q.to_vec(); answer_states.rows()];
    Ok(affine_rows(answer_states, &queries, p))
}

fn aligned_queries<T: Scalar>(question_states: &Tensor<T>, n: usize, alignment: TokenAlignment) -> Vec<Vec<T>> {
    let d = question_states.shape()[1];
    match alignment {
        TokenAlignment::Positional => (0..n)
            .map(|t| {
                if t < question_states.rows() {
                    question_states.row(t).to_vec()
                } else {
                    vec![T::zero(); d]
                }
            })
            .collect(),
        TokenAlignment::Mean => {
            let mut mean = vec![T::zero(); d];
            for t in 0..question_states.rows() {
                for (m, &v) in mean.iter_mut().zip(question_states.row(t)) {
                    *m += v;
                }
            }
            let inv = T::one() / T::lit(question_states.rows() as f64);
            mean.iter_mut().for_each(|m| *m *= inv);
            vec![mean; n]
        }
    }
}

/// Rows `W_aw·a(t) + W_qw·q̃(t)` with `q̃` chosen by `alignment`.
pub fn token_scores<T: Scalar>(
    answer_states: &Tensor<T>,
    question_states: &Tensor<T>,
    p: &AttentionParams<T>,
    alignment: TokenAlignment,
) -> Result<Tensor<T>> {
    check_square(answer_states, p, "token_scores")?;
    check_square(question_states, p, "token_scores")?;
    let queries = aligned_queries(question_states, answer_states.rows(), alignment);
    Ok(affine_rows(answer_states, &queries, p))
}

fn logits<T: Scalar>(score_rows: &Tensor<T>, p: &AttentionParams<T>) -> (Tensor<T>, Vec<T>) {
    let act = score_rows.map(|v| v.tanh());
    let l = (0..act.rows()).map(|t| dot(p.w_ws.data(), act.row(t))).collect();
    (act, l)
}

/// Softmax over `w_ws · tanh(row)`, or the raw exponentials.
pub fn attention_weights<T: Scalar>(score_rows: &Tensor<T>, p: &AttentionParams<T>, norm: AttentionNorm) -> Result<Tensor<T>> {
    if score_rows.rank() != 2 || score_rows.rows() == 0 {
        return Err(Error::EmptyInput("attention_weights"));
    }
    if score_rows.shape()[1] != p.dim() {
        return Err(Error::shape("attention_weights", score_rows.shape(), &[score_rows.rows(), p.dim()]));
    }
    let (_, l) = logits(score_rows, p);
    Ok(Tensor::vector(normalize(&l, norm)?))
}

fn normalize<T: Scalar>(l: &[T], norm: AttentionNorm) -> Result<Vec<T>> {
    match norm {
        AttentionNorm::Softmax => softmax(l),
        AttentionNorm::RawExp => Ok(l.iter().map(|v| v.exp()).collect()),
    }
}

fn weighted_rows<T: Scalar>(answer_states: &Tensor<T>, weights: &[T]) -> Tensor<T> {
    let mut rows = answer_states.clone();
    for (t, &w) in weights.iter().enumerate() {
        rows.row_mut(t).iter_mut().for_each(|v| *v *= w);
    }
    rows
}

/// Pools the rows `a(t)·s(t)`. Weights must sum to one.
pub fn attended_pool<T: Scalar>(answer_states: &Tensor<T>, weights: &Tensor<T>, mode: Pooling) -> Result<Tensor<T>> {
    if weights.len() != answer_states.rows() {
        return Err(Error::shape("attended_pool", weights.shape(), &[answer_states.rows()]));
    }
    let total: f64 = weights.data().iter().map(|w| w.as_f64()).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("attention weights sum to {total}, expected 1")));
    }
    Ok(Tensor::vector(pool_forward(&weighted_rows(answer_states, weights.data()), mode)?.0))
}

/// Everything the backward pass needs from one attention forward pass.
#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    cfg: AttentionConfig,
    queries: Vec<Vec<T>>,
    act: Tensor<T>,
    weights: Vec<T>,
    pool: PoolCache,
}

impl<T: Scalar> AttentionCache<T> {
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn pool(&self) -> &PoolCache {
        &self.pool
    }
}

/// Computes the attended answer vector `c_a`.
pub fn attend_forward<T: Scalar>(
    answer_states: &Tensor<T>,
    question_states: &Tensor<T>,
    c_q: &[T],
    p: &AttentionParams<T>,
    cfg: AttentionConfig,
) -> Result<(Vec<T>, AttentionCache<T>)> {
    let scores = match cfg.mode {
        AttentionMode::Phrase => phrase_scores(answer_states, c_q, p)?,
        AttentionMode::Token => token_scores(answer_states, question_states, p, cfg.alignment)?,
    };
    let queries = match cfg.mode {
        AttentionMode::Phrase => vec![c_q.to_vec(); answer_states.rows()],
        AttentionMode::Token => aligned_queries(question_states, answer_states.rows(), cfg.alignment),
    };
    let (act, l) = logits(&scores, p);
    let weights = normalize(&l, cfg.norm)?;
    let (c_a, pool) = pool_forward(&weighted_rows(answer_states, &weights), cfg.pooling)?;
    Ok((
        c_a,
        AttentionCache {
            cfg,
            queries,
            act,
            weights,
            pool,
        },
    ))
}

/// Input gradients of [`attend_forward`].
#[derive(Clone, Debug)]
pub struct AttentionInputGrads<T> {
    pub answer_states: Tensor<T>,
    pub question_states: Tensor<T>,
    pub c_q: Vec<T>,
}

pub fn attend_backward<T: Scalar>(
    cache: &AttentionCache<T>,
    d_ca: &[T],
    answer_states: &Tensor<T>,
    question_states: &Tensor<T>,
    p: &AttentionParams<T>,
    grads: &mut AttentionParams<T>,
) -> AttentionInputGrads<T> {
    let d = p.dim();
    let n = answer_states.rows();
    let d_rows = pool_backward(&cache.pool, d_ca);

    let mut d_answer = Tensor::zeros(&[n, d]);
    let mut d_s = vec![T::zero(); n];
    for t in 0..n {
        let s = cache.weights[t];
        for ((da, &dr), &a) in d_answer.row_mut(t).iter_mut().zip(d_rows.row(t)).zip(answer_states.row(t)) {
            *da += dr * s;
            d_s[t] += dr * a;
        }
    }
    let d_l = match cache.cfg.norm {
        AttentionNorm::Softmax => softmax_backward(&cache.weights, &d_s),
        AttentionNorm::RawExp => d_s.iter().zip(&cache.weights).map(|(&g, &w)| g * w).collect(),
    };

    let mut d_question = Tensor::zeros(question_states.shape());
    let mut d_cq = vec![T::zero(); d];
    let q_rows = question_states.rows();
    for t in 0..n {
        let act = cache.act.row(t);
        for (g, &a) in grads.w_ws.data_mut().iter_mut().zip(act) {
            *g += d_l[t] * a;
        }
        let d_z: Vec<T> = act
            .iter()
            .zip(p.w_ws.data())
            .map(|(&a, &w)| d_l[t] * w * (T::one() - a * a))
            .collect();
        outer_acc(grads.w_aw.data_mut(), &d_z, answer_states.row(t));
        outer_acc(grads.w_qw.data_mut(), &d_z, &cache.queries[t]);
        matvec_t_acc(p.w_aw.data(), d, &d_z, d_answer.row_mut(t));
        let mut d_query = vec![T::zero(); d];
        matvec_t_acc(p.w_qw.data(), d, &d_z, &mut d_query);
        match (cache.cfg.mode, cache.cfg.alignment) {
            (AttentionMode::Phrase, _) => d_cq.iter_mut().zip(&d_query).for_each(|(a, &b)| *a += b),
            (AttentionMode::Token, TokenAlignment::Positional) => {
                if t < q_rows {
                    d_question.row_mut(t).iter_mut().zip(&d_query).for_each(|(a, &b)| *a += b);
                }
            }
            (AttentionMode::Token, TokenAlignment::Mean) => {
                let inv = T::one() / T::lit(q_rows as f64);
                for r in 0..q_rows {
                    d_question.row_mut(r).iter_mut().zip(&d_query).for_each(|(a, &b)| *a += b * inv);
                }
            }
        }
    }
    AttentionInputGrads {
        answer_states: d_answer,
        question_states: d_question,
        c_q: d_cq,
    }
}
