use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::attention::{attend_backward, attend_forward, AttentionCache, AttentionParams};
use crate::corpus::QAExample;
use crate::embeddings::EmbeddingStore;
use crate::encoder::{bilstm_backward, bilstm_forward, pool_backward, pool_forward, BiLstmCache, BiLstmParams, PoolCache};
use crate::error::{Error, Result};
use crate::features::{normalize_backward, normalize_forward, FeatureNormParams, FeatureScaler};
use crate::interaction::{
    classify_backward, classify_forward, merge, split_merge, tsim, tsim_backward, ClassifierCache, ClassifierParams,
    TensorParams, Tsim, RELATIONS,
};
use crate::numkit::{ParamSet, Rng, Scalar, Tensor};

use super::ModelConfig;

/// Parameters that carry the L2 penalty, each as its own term.
pub const REGULARIZED: [&str; 5] = ["classifier.W_hidden", "classifier.W_out", "tensor.M1", "tensor.M2", "tensor.M3"];

/// Lower/upper clamp on `s` inside the logarithms.
pub const S_CLAMP: f64 = 1e-12;

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub encoder_q: BiLstmParams<T>,
    /// Separate answer encoder when encoders are untied.
    pub encoder_a: Option<BiLstmParams<T>>,
    pub attention: AttentionParams<T>,
    pub feature_norm: FeatureNormParams<T>,
    pub tensors: TensorParams<T>,
    pub classifier: ClassifierParams<T>,
    /// Trainable copy of the store's matrix when embeddings are unfrozen.
    pub word_vectors: Option<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(config: &ModelConfig, store: &EmbeddingStore<T>) -> Self {
        let mut rng = Rng::new(config.seed);
        let d = config.d();
        let encoder_q = BiLstmParams::init(&mut rng, config.d_e, config.h);
        let encoder_a = (!config.tie_encoders).then(|| BiLstmParams::init(&mut rng, config.d_e, config.h));
        ModelParams {
            encoder_q,
            encoder_a,
            attention: AttentionParams::init(&mut rng, d),
            feature_norm: FeatureNormParams::init(&mut rng, config.features, d, config.feature_activation),
            tensors: TensorParams::init(&mut rng, config.k, d),
            classifier: ClassifierParams::init(&mut rng, config.merge_width(), config.n_h),
            word_vectors: config.train_embeddings.then(|| store.matrix().clone()),
        }
    }

    /// All-zero parameters for `config`. `vocab_shape` sizes the trainable
    /// embedding matrix and must be given iff embeddings are trained.
    pub fn zeros(config: &ModelConfig, vocab_shape: Option<&[usize]>) -> Result<Self> {
        let d = config.d();
        let enc = || BiLstmParams {
            fwd: crate::encoder::LstmParams::zeros(config.d_e, config.h),
            bwd: crate::encoder::LstmParams::zeros(config.d_e, config.h),
        };
        let word_vectors = match (config.train_embeddings, vocab_shape) {
            (true, Some(&[rows, cols])) if cols == config.d_e => Some(Tensor::zeros(&[rows, cols])),
            (false, None) => None,
            _ => return Err(Error::ModelFormat("embedding block does not match train_embeddings / d_e".into())),
        };
        Ok(ModelParams {
            encoder_q: enc(),
            encoder_a: (!config.tie_encoders).then(enc),
            attention: AttentionParams::zeros(d),
            feature_norm: FeatureNormParams::zeros(config.features, d, config.feature_activation),
            tensors: TensorParams::zeros(config.k, d),
            classifier: ClassifierParams::zeros(config.merge_width(), config.n_h),
            word_vectors,
        })
    }

    /// Same layout, all zeros; `word_vectors` is dropped (its gradient is
    /// kept sparsely in [`Gradients`]).
    pub fn zeros_like(&self) -> Self {
        let f = &self.feature_norm;
        ModelParams {
            encoder_q: self.encoder_q.zeros_like(),
            encoder_a: self.encoder_a.as_ref().map(BiLstmParams::zeros_like),
            attention: AttentionParams::zeros(self.attention.dim()),
            feature_norm: FeatureNormParams::zeros(f.w_h.shape()[0], f.dim(), f.alpha),
            tensors: TensorParams::zeros(self.tensors.k(), self.tensors.dim()),
            classifier: ClassifierParams::zeros(self.classifier.input_width(), self.classifier.hidden_width()),
            word_vectors: None,
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        let q_prefix = if self.encoder_a.is_some() { "encoder_q" } else { "encoder" };
        out.extend(self.encoder_q.named().into_iter().map(|(n, t)| (format!("{q_prefix}.{n}"), t)));
        if let Some(a) = &self.encoder_a {
            out.extend(a.named().into_iter().map(|(n, t)| (format!("encoder_a.{n}"), t)));
        }
        out.extend(self.attention.named().into_iter().map(|(n, t)| (format!("attention.{n}"), t)));
        out.push(("features.w_h".into(), &self.feature_norm.w_h));
        out.push(("features.b".into(), &self.feature_norm.b));
        for (r, m) in self.tensors.m.iter().enumerate() {
            out.push((format!("tensor.{}", RELATIONS[r]), m));
        }
        let c = &self.classifier;
        out.push(("classifier.W_hidden".into(), &c.w_hidden));
        out.push(("classifier.b_hidden".into(), &c.b_hidden));
        out.push(("classifier.W_out".into(), &c.w_out));
        out.push(("classifier.b_out".into(), &c.b_out));
        if let Some(w) = &self.word_vectors {
            out.push(("embeddings".into(), w));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        let q_prefix = if self.encoder_a.is_some() { "encoder_q" } else { "encoder" };
        out.extend(self.encoder_q.named_mut().into_iter().map(|(n, t)| (format!("{q_prefix}.{n}"), t)));
        if let Some(a) = &mut self.encoder_a {
            out.extend(a.named_mut().into_iter().map(|(n, t)| (format!("encoder_a.{n}"), t)));
        }
        out.extend(self.attention.named_mut().into_iter().map(|(n, t)| (format!("attention.{n}"), t)));
        out.push(("features.w_h".into(), &mut self.feature_norm.w_h));
        out.push(("features.b".into(), &mut self.feature_norm.b));
        for (r, m) in self.tensors.m.iter_mut().enumerate() {
            out.push((format!("tensor.{}", RELATIONS[r]), m));
        }
        let c = &mut self.classifier;
        out.push(("classifier.W_hidden".into(), &mut c.w_hidden));
        out.push(("classifier.b_hidden".into(), &mut c.b_hidden));
        out.push(("classifier.W_out".into(), &mut c.w_out));
        out.push(("classifier.b_out".into(), &mut c.b_out));
        if let Some(w) = &mut self.word_vectors {
            out.push(("embeddings".into(), w));
        }
        out
    }

    fn encoder_a(&self) -> &BiLstmParams<T> {
        self.encoder_a.as_ref().unwrap_or(&self.encoder_q)
    }
}

/// Gradient accumulator: dense tensors plus sparse embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub dense: ModelParams<T>,
    pub embedding_rows: BTreeMap<usize, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(params: &ModelParams<T>) -> Self {
        Gradients {
            dense: params.zeros_like(),
            embedding_rows: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, other: &Gradients<T>) {
        for ((_, a), (_, b)) in self.dense.named_mut().into_iter().zip(other.dense.named()) {
            a.add_assign(b);
        }
        for (row, g) in &other.embedding_rows {
            let acc = self
                .embedding_rows
                .entry(*row)
                .or_insert_with(|| vec![T::zero(); g.len()]);
            acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }

    pub fn is_finite(&self) -> Option<String> {
        for (name, t) in self.dense.named() {
            if !t.is_finite() {
                return Some(name);
            }
        }
        self.embedding_rows
            .values()
            .any(|r| r.iter().any(|v| !v.is_finite()))
            .then(|| "embeddings".to_string())
    }

    /// Dense gradient for `name` (the embedding gradient is materialized).
    pub fn dense_for(&self, name: &str, params: &ModelParams<T>) -> Tensor<T> {
        if name == "embeddings" {
            let w = params.word_vectors.as_ref().expect("embeddings are trainable");
            let mut g = w.zeros_like();
            for (&row, v) in &self.embedding_rows {
                g.row_mut(row).copy_from_slice(v);
            }
            return g;
        }
        self.dense
            .named()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| panic!("no gradient named {name}"))
    }
}

/// Per-example activations kept for the backward pass.
pub struct ForwardCache<T> {
    q_rows: Vec<Option<usize>>,
    a_rows: Vec<Option<usize>>,
    enc_q: BiLstmCache<T>,
    enc_a: BiLstmCache<T>,
    states_q: Tensor<T>,
    states_a: Tensor<T>,
    pool_q: PoolCache,
    mask_cq: Option<Vec<T>>,
    mask_ca: Option<Vec<T>>,
    c_q: Vec<T>,
    att: AttentionCache<T>,
    c_a: Vec<T>,
    features: Vec<T>,
    ext_pre: Vec<T>,
    c_ext: Vec<T>,
    tsim: Tsim<T>,
    cls: ClassifierCache<T>,
    pub s: T,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn attention_weights(&self) -> &[T] {
        self.att.weights()
    }

    pub fn context(&self) -> (&[T], &[T], &[T]) {
        (&self.c_q, &self.c_a, &self.c_ext)
    }

    /// Max-pooling winners of the question and attended-answer pools. Two
    /// parameter points with equal signatures lie on the same smooth piece.
    pub fn pooling_signature(&self) -> Vec<usize> {
        let mut sig = self.pool_q.argmax().to_vec();
        sig.extend_from_slice(self.att.pool().argmax());
        sig
    }
}

fn dropout_mask<T: Scalar>(rng: &mut Rng, n: usize, p: f64) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
        .collect()
}

fn apply_mask<T: Scalar>(v: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(x, &k)| *x *= k);
    }
}

/// One training example with its raw (unscaled) feature row.
#[derive(Clone, Copy, Debug)]
pub struct TrainItem<'a> {
    pub example: &'a QAExample,
    pub features: &'a [f64],
    /// Dropout stream; each item draws its masks from `Rng::derive(seed, stream)`.
    pub stream: u64,
}

/// Data term and each L2 term of the objective, reported separately.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub data: f64,
    pub penalties: Vec<(String, f64)>,
    pub total: f64,
}

/// Clamped binary cross-entropy and its derivative in `s`.
pub fn cross_entropy<T: Scalar>(s: T, y: T) -> (T, T) {
    let lo = T::lit(S_CLAMP);
    let hi = T::one() - lo;
    let sc = s.max(lo).min(hi);
    let one = T::one();
    let loss = -(y * sc.ln() + (one - y) * (one - sc).ln());
    let ds = if sc == s { -y / s + (one - y) / (one - s) } else { T::zero() };
    (loss, ds)
}

/// Trained (or freshly initialized) model plus everything needed to score.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    pub scaler: FeatureScaler,
    pub manifest_hash: String,
    pub embedding_fingerprint: String,
}

impl<T: Scalar> ModelState<T> {
    pub fn init(config: ModelConfig, store: &EmbeddingStore<T>, manifest_hash: &str) -> Result<Self> {
        config.validate()?;
        if store.dim() != config.d_e {
            return Err(Error::Dimension {
                expected: config.d_e,
                found: store.dim(),
            });
        }
        let params = ModelParams::init(&config, store);
        Ok(ModelState {
            scaler: FeatureScaler::identity(config.features),
            config,
            params,
            manifest_hash: manifest_hash.to_string(),
            embedding_fingerprint: store.fingerprint().to_string(),
        })
    }

    /// Fails with a provenance error when the feature manifest or the
    /// embedding store differs from the one the model was trained with.
    pub fn check_provenance(&self, manifest_hash: &str, embedding_fingerprint: &str) -> Result<()> {
        if self.manifest_hash != manifest_hash {
            return Err(Error::Provenance(format!(
                "feature manifest {} does not match the model's {}",
                short(manifest_hash),
                short(&self.manifest_hash)
            )));
        }
        if self.embedding_fingerprint != embedding_fingerprint {
            return Err(Error::Provenance(format!(
                "embedding fingerprint {} does not match the model's {}",
                short(embedding_fingerprint),
                short(&self.embedding_fingerprint)
            )));
        }
        Ok(())
    }

    fn embed(&self, store: &EmbeddingStore<T>, tokens: &[String]) -> Result<(Tensor<T>, Vec<Option<usize>>)> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("embed_sequence"));
        }
        let mut out = Tensor::zeros(&[tokens.len(), store.dim()]);
        let mut rows = Vec::with_capacity(tokens.len());
        for (t, tok) in tokens.iter().enumerate() {
            let idx = store.index_of(tok);
            match (&self.params.word_vectors, idx) {
                (Some(w), Some(i)) => out.row_mut(t).copy_from_slice(w.row(i)),
                _ => store.lookup_into(tok, out.row_mut(t)),
            }
            rows.push(idx);
        }
        Ok((out, rows))
    }

    /// Full forward pass. Dropout is active iff `dropout_rng` is given.
    pub fn forward(
        &self,
        store: &EmbeddingStore<T>,
        question: &[String],
        answer: &[String],
        raw_features: &[f64],
        dropout_rng: Option<&mut Rng>,
    ) -> Result<ForwardCache<T>> {
        let cfg = &self.config;
        if raw_features.len() != cfg.features {
            return Err(Error::Dimension {
                expected: cfg.features,
                found: raw_features.len(),
            });
        }
        let p = &self.params;
        let (xq, q_rows) = self.embed(store, question)?;
        let (xa, a_rows) = self.embed(store, answer)?;
        let (out_q, enc_q) = bilstm_forward(&xq, &p.encoder_q)?;
        let (out_a, enc_a) = bilstm_forward(&xa, p.encoder_a())?;

        let (mut mask_cq, mut mask_ca, mut mask_h) = (None, None, None);
        if let Some(rng) = dropout_rng {
            if cfg.dropout > 0.0 {
                mask_cq = Some(dropout_mask(rng, cfg.d(), cfg.dropout));
                mask_ca = Some(dropout_mask(rng, cfg.d(), cfg.dropout));
                mask_h = Some(dropout_mask(rng, cfg.n_h, cfg.dropout));
            }
        }

        let (mut c_q, pool_q) = pool_forward(&out_q.states, cfg.pooling)?;
        apply_mask(&mut c_q, &mask_cq);
        let (mut c_a, att) = attend_forward(&out_a.states, &out_q.states, &c_q, &p.attention, cfg.attention_config())?;
        apply_mask(&mut c_a, &mask_ca);

        let features: Vec<T> = self.scaler.apply(raw_features).into_iter().map(T::lit).collect();
        let (c_ext, ext_pre) = normalize_forward(&features, &p.feature_norm)?;
        let ts = tsim(&c_q, &c_a, &c_ext, &p.tensors, cfg.tensor_activation)?;
        let h = merge(&c_q, [ts.qa(), ts.q_ext(), ts.a_ext()], &c_a);
        let (s, cls) = classify_forward(&h, &p.classifier, cfg.hidden_activation, mask_h.as_deref())?;
        Ok(ForwardCache {
            q_rows,
            a_rows,
            enc_q,
            enc_a,
            states_q: out_q.states,
            states_a: out_a.states,
            pool_q,
            mask_cq,
            mask_ca,
            c_q,
            att,
            c_a,
            features,
            ext_pre,
            c_ext,
            tsim: ts,
            cls,
            s,
        })
    }

    /// Evaluation-mode relevance probability.
    pub fn score(&self, store: &EmbeddingStore<T>, ex: &QAExample, raw_features: &[f64]) -> Result<T> {
        Ok(self
            .forward(store, &ex.question_tokens, &ex.answer_tokens, raw_features, None)?
            .s)
    }

    /// Accumulates `∂L/∂θ` given `ds = ∂L/∂s`.
    pub fn backward(&self, cache: &ForwardCache<T>, ds: T, grads: &mut Gradients<T>) {
        let cfg = &self.config;
        let p = &self.params;
        let g = &mut grads.dense;
        let (d, k) = (cfg.d(), cfg.k);

        let dh = classify_backward(&cache.cls, ds, &p.classifier, cfg.hidden_activation, &mut g.classifier);
        let (mut dcq, dt, mut dca) = split_merge(&dh, d, k);
        let ig = tsim_backward(
            &cache.c_q,
            &cache.c_a,
            &cache.c_ext,
            &cache.tsim,
            &dt,
            &p.tensors,
            cfg.tensor_activation,
            &mut g.tensors,
        );
        dcq.iter_mut().zip(&ig.c_q).for_each(|(a, &b)| *a += b);
        dca.iter_mut().zip(&ig.c_a).for_each(|(a, &b)| *a += b);
        normalize_backward(&cache.features, &cache.ext_pre, &ig.c_ext, &p.feature_norm, &mut g.feature_norm);

        apply_mask(&mut dca, &cache.mask_ca);
        let att = attend_backward(&cache.att, &dca, &cache.states_a, &cache.states_q, &p.attention, &mut g.attention);
        dcq.iter_mut().zip(&att.c_q).for_each(|(a, &b)| *a += b);
        apply_mask(&mut dcq, &cache.mask_cq);
        let mut d_states_q = pool_backward(&cache.pool_q, &dcq);
        d_states_q.add_assign(&att.question_states);

        let want_x = p.word_vectors.is_some();
        let dxq = bilstm_backward(&cache.enc_q, &d_states_q, &p.encoder_q, &mut g.encoder_q, want_x);
        let dxa = match g.encoder_a.as_mut() {
            Some(ga) => bilstm_backward(&cache.enc_a, &att.answer_states, p.encoder_a(), ga, want_x),
            None => bilstm_backward(&cache.enc_a, &att.answer_states, &p.encoder_q, &mut g.encoder_q, want_x),
        };
        if let (Some(dxq), Some(dxa)) = (dxq, dxa) {
            for (dx, rows) in [(&dxq, &cache.q_rows), (&dxa, &cache.a_rows)] {
                for (t, row) in rows.iter().enumerate() {
                    if let Some(r) = row {
                        let acc = grads
                            .embedding_rows
                            .entry(*r)
                            .or_insert_with(|| vec![T::zero(); dx.row_len()]);
                        acc.iter_mut().zip(dx.row(t)).for_each(|(a, &b)| *a += b);
                    }
                }
            }
        }
    }

    /// Mean clamped cross-entropy over `batch` plus `λ·‖θ‖²` for each
    /// regularized tensor. With `grads`, also accumulates the gradient.
    pub fn batch_loss(
        &self,
        store: &EmbeddingStore<T>,
        batch: &[TrainItem<'_>],
        train_mode: bool,
        grads: Option<&mut Gradients<T>>,
    ) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch_loss"));
        }
        const CHUNK: usize = 4;
        let want_grads = grads.is_some();
        let inv_n = T::one() / T::lit(batch.len() as f64);
        let seed = self.config.seed;
        let partials: Vec<Result<(f64, Option<Gradients<T>>)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut local = want_grads.then(|| Gradients::zeros(&self.params));
                let mut loss = 0.0;
                for item in chunk {
                    let ex = item.example;
                    let mut rng = Rng::derive(seed, item.stream);
                    let cache = self.forward(
                        store,
                        &ex.question_tokens,
                        &ex.answer_tokens,
                        item.features,
                        train_mode.then_some(&mut rng),
                    )?;
                    let (l, ds) = cross_entropy(cache.s, T::lit(ex.label));
                    if !l.is_finite() || !cache.s.is_finite() {
                        return Err(Error::NonFinite(format!("loss for {}/{}", ex.qid, ex.aid)));
                    }
                    loss += l.as_f64();
                    if let Some(g) = local.as_mut() {
                        self.backward(&cache, ds * inv_n, g);
                    }
                }
                Ok((loss, local))
            })
            .collect();

        let mut data = 0.0;
        let mut total_grads = grads;
        for part in partials {
            let (l, g) = part?;
            data += l;
            if let (Some(acc), Some(g)) = (total_grads.as_deref_mut(), g) {
                acc.add(&g);
            }
        }
        data /= batch.len() as f64;

        let lambda = self.config.lambda;
        let mut penalties = Vec::with_capacity(REGULARIZED.len());
        let values = self.params.named();
        for name in REGULARIZED {
            let theta = values.iter().find(|(n, _)| n == name).map(|(_, t)| *t).expect("regularized tensor exists");
            penalties.push((name.to_string(), lambda * theta.sum_sq().as_f64()));
            if let Some(acc) = total_grads.as_deref_mut() {
                let two_lambda = T::lit(2.0 * lambda);
                let mut named = acc.dense.named_mut();
                let g = &mut named.iter_mut().find(|(n, _)| n == name).expect("gradient exists").1;
                g.data_mut().iter_mut().zip(theta.data()).for_each(|(g, &v)| *g += two_lambda * v);
            }
        }
        let total = data + penalties.iter().map(|(_, v)| v).sum::<f64>();
        Ok(LossBreakdown { data, penalties, total })
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// A model paired with its gradients, exposed tensor by tensor for
/// finite-difference checking.
pub struct GradCheckModel<T> {
    pub model: ModelState<T>,
    names: Vec<String>,
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> GradCheckModel<T> {
    pub fn new(model: ModelState<T>, grads: &Gradients<T>) -> Self {
        let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
        let grads = names.iter().map(|n| grads.dense_for(n, &model.params)).collect();
        GradCheckModel { model, names, grads }
    }

    /// Multiplies the stored analytic gradient of every tensor in `block`
    /// (the name prefix before the first `.`) by `factor`.
    pub fn scale_block(&mut self, block: &str, factor: f64) -> usize {
        let mut hit = 0;
        for (n, g) in self.names.iter().zip(self.grads.iter_mut()) {
            if n.split('.').next() == Some(block) {
                g.scale(T::lit(factor));
                hit += 1;
            }
        }
        hit
    }
}

impl<T: Scalar> ParamSet<T> for GradCheckModel<T> {
    fn param_count(&self) -> usize {
        self.names.len()
    }

    fn param_name(&self, i: usize) -> String {
        self.names[i].clone()
    }

    fn param_value(&self, i: usize) -> &Tensor<T> {
        self.model.params.named().swap_remove(i).1
    }

    fn param_value_mut(&mut self, i: usize) -> &mut Tensor<T> {
        self.model.params.named_mut().swap_remove(i).1
    }

    fn param_grad(&self, i: usize) -> &Tensor<T> {
        &self.grads[i]
    }
}
