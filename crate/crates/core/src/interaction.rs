//! Three-relation tensor similarity, the merge layer and the classifier head.

use crate::error::{Error, Result};
use crate::numkit::{
    bilinear, matvec, matvec_t_acc, outer_acc, softmax, xavier_uniform, Activation, Rng, Scalar, Tensor,
};

/// Relation tensors, each `[k, d, d]` (slice-major): `M1` for question–answer,
/// `M2` question–features, `M3` answer–features.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorParams<T> {
    pub m: [Tensor<T>; 3],
}

pub const RELATIONS: [&str; 3] = ["M1", "M2", "M3"];

impl<T: Scalar> TensorParams<T> {
    pub fn zeros(k: usize, d: usize) -> Self {
        TensorParams {
            m: std::array::from_fn(|_| Tensor::zeros(&[k, d, d])),
        }
    }

    /// Glorot-uniform slices plus `0.01·I` on each slice.
    pub fn init(rng: &mut Rng, k: usize, d: usize) -> Self {
        let mut p = Self::zeros(k, d);
        for m in &mut p.m {
            for s in 0..k {
                let w: Tensor<T> = xavier_uniform(rng, &[d, d], d, d);
                let slice = m.slice_mut(s);
                slice.copy_from_slice(w.data());
                for i in 0..d {
                    slice[i * d + i] += T::lit(0.01);
                }
            }
        }
        p
    }

    pub fn k(&self) -> usize {
        self.m[0].shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.m[0].shape()[1]
    }
}

/// The three similarity vectors plus their pre-activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Tsim<T> {
    pub pre: [Vec<T>; 3],
    pub out: [Vec<T>; 3],
}

impl<T: Scalar> Tsim<T> {
    pub fn qa(&self) -> &[T] {
        &self.out[0]
    }

    pub fn q_ext(&self) -> &[T] {
        &self.out[1]
    }

    pub fn a_ext(&self) -> &[T] {
        &self.out[2]
    }
}

fn relation_inputs<'a, T>(c_q: &'a [T], c_a: &'a [T], c_ext: &'a [T]) -> [(&'a [T], &'a [T]); 3] {
    [(c_q, c_a), (c_q, c_ext), (c_a, c_ext)]
}

/// `f(c_qᵀ M1 c_a)`, `f(c_qᵀ M2 c_ext)`, `f(c_aᵀ M3 c_ext)`.
pub fn tsim<T: Scalar>(c_q: &[T], c_a: &[T], c_ext: &[T], tp: &TensorParams<T>, f: Activation) -> Result<Tsim<T>> {
    let d = tp.dim();
    for (v, op) in [(c_q, "tsim c_q"), (c_a, "tsim c_a"), (c_ext, "tsim c_ext")] {
        if v.len() != d {
            return Err(Error::shape(op, &[v.len()], &[d]));
        }
    }
    let mut pre: [Vec<T>; 3] = Default::default();
    for (r, (x, y)) in relation_inputs(c_q, c_a, c_ext).into_iter().enumerate() {
        pre[r] = bilinear(x, &tp.m[r], y)?.into_data();
    }
    let out = pre.clone().map(|v| v.into_iter().map(|x| f.apply(x)).collect());
    Ok(Tsim { pre, out })
}

/// Gradients of [`tsim`] with respect to its three context vectors.
#[derive(Clone, Debug)]
pub struct TsimInputGrads<T> {
    pub c_q: Vec<T>,
    pub c_a: Vec<T>,
    pub c_ext: Vec<T>,
}

pub fn tsim_backward<T: Scalar>(
    c_q: &[T],
    c_a: &[T],
    c_ext: &[T],
    t: &Tsim<T>,
    d_out: &[Vec<T>; 3],
    tp: &TensorParams<T>,
    f: Activation,
    grads: &mut TensorParams<T>,
) -> TsimInputGrads<T> {
    let d = tp.dim();
    let mut dx: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); d]);
    let mut dy: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); d]);
    for (r, (x, y)) in relation_inputs(c_q, c_a, c_ext).into_iter().enumerate() {
        for s in 0..tp.k() {
            let dp = d_out[r][s] * f.derivative(t.pre[r][s]);
            let slice = tp.m[r].slice(s);
            let xs: Vec<T> = x.iter().map(|&v| v * dp).collect();
            outer_acc(grads.m[r].slice_mut(s), &xs, y);
            let my = matvec(slice, d, y);
            dx[r].iter_mut().zip(&my).for_each(|(a, &b)| *a += dp * b);
            matvec_t_acc(slice, d, &xs, &mut dy[r]);
        }
    }
    let sum = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x + y).collect::<Vec<T>>();
    TsimInputGrads {
        c_q: sum(&dx[0], &dx[1]),
        c_a: sum(&dy[0], &dx[2]),
        c_ext: sum(&dy[1], &dy[2]),
    }
}

/// `[c_q ; Tsim_qa ; Tsim_qExt ; Tsim_aExt ; c_a]`.
pub fn merge<T: Scalar>(c_q: &[T], tsims: [&[T]; 3], c_a: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(c_q.len() + c_a.len() + tsims.iter().map(|t| t.len()).sum::<usize>());
    out.extend_from_slice(c_q);
    for t in tsims {
        out.extend_from_slice(t);
    }
    out.extend_from_slice(c_a);
    out
}

/// Splits a merge-vector gradient back into `(d_c_q, [d_tsim; 3], d_c_a)`.
pub fn split_merge<T: Scalar>(g: &[T], d: usize, k: usize) -> (Vec<T>, [Vec<T>; 3], Vec<T>) {
    debug_assert_eq!(g.len(), 2 * d + 3 * k);
    let cq = g[..d].to_vec();
    let t = std::array::from_fn(|r| g[d + r * k..d + (r + 1) * k].to_vec());
    let ca = g[d + 3 * k..].to_vec();
    (cq, t, ca)
}

/// Hidden layer and two-class softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<T> {
    /// `[merge width × n_h]`.
    pub w_hidden: Tensor<T>,
    pub b_hidden: Tensor<T>,
    /// `[n_h × 2]`.
    pub w_out: Tensor<T>,
    pub b_out: Tensor<T>,
}

impl<T: Scalar> ClassifierParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        ClassifierParams {
            w_hidden: Tensor::zeros(&[input, hidden]),
            b_hidden: Tensor::zeros(&[hidden]),
            w_out: Tensor::zeros(&[hidden, 2]),
            b_out: Tensor::zeros(&[2]),
        }
    }

    pub fn init(rng: &mut Rng, input: usize, hidden: usize) -> Self {
        ClassifierParams {
            w_hidden: xavier_uniform(rng, &[input, hidden], input, hidden),
            b_hidden: Tensor::zeros(&[hidden]),
            w_out: xavier_uniform(rng, &[hidden, 2], hidden, 2),
            b_out: Tensor::zeros(&[2]),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w_hidden.shape()[0]
    }

    pub fn hidden_width(&self) -> usize {
        self.w_hidden.shape()[1]
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierCache<T> {
    input: Vec<T>,
    pre_hidden: Vec<T>,
    mask: Option<Vec<T>>,
    hidden: Vec<T>,
    probs: Vec<T>,
}

impl<T: Scalar> ClassifierCache<T> {
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

/// Relevance probability `s` plus the cache for [`classify_backward`].
/// `dropout_mask`, when given, multiplies the hidden activations (inverted
/// dropout: entries are 0 or `1/(1−p)`).
pub fn classify_forward<T: Scalar>(
    h_merge: &[T],
    cp: &ClassifierParams<T>,
    act: Activation,
    dropout_mask: Option<&[T]>,
) -> Result<(T, ClassifierCache<T>)> {
    let n_h = cp.hidden_width();
    if h_merge.len() != cp.input_width() {
        return Err(Error::shape("classify", &[h_merge.len()], cp.w_hidden.shape()));
    }
    if dropout_mask.is_some_and(|m| m.len() != n_h) {
        return Err(Error::shape("classify dropout", &[dropout_mask.map_or(0, <[T]>::len)], &[n_h]));
    }
    let mut pre_hidden = cp.b_hidden.data().to_vec();
    matvec_t_acc(cp.w_hidden.data(), n_h, h_merge, &mut pre_hidden);
    let mut hidden: Vec<T> = pre_hidden.iter().map(|&v| act.apply(v)).collect();
    if let Some(m) = dropout_mask {
        hidden.iter_mut().zip(m).for_each(|(h, &k)| *h *= k);
    }
    let mut logits = cp.b_out.data().to_vec();
    matvec_t_acc(cp.w_out.data(), 2, &hidden, &mut logits);
    let probs = softmax(&logits)?;
    let s = probs[1];
    Ok((
        s,
        ClassifierCache {
            input: h_merge.to_vec(),
            pre_hidden,
            mask: dropout_mask.map(<[T]>::to_vec),
            hidden,
            probs,
        },
    ))
}

pub fn classify<T: Scalar>(
    h_merge: &[T],
    cp: &ClassifierParams<T>,
    act: Activation,
    dropout_mask: Option<&[T]>,
) -> Result<T> {
    Ok(classify_forward(h_merge, cp, act, dropout_mask)?.0)
}

/// Backpropagates `ds` (gradient of the loss w.r.t. `s`) and returns the
/// merge-vector gradient.
pub fn classify_backward<T: Scalar>(
    cache: &ClassifierCache<T>,
    ds: T,
    cp: &ClassifierParams<T>,
    act: Activation,
    grads: &mut ClassifierParams<T>,
) -> Vec<T> {
    let n_h = cp.hidden_width();
    let g = ds * cache.probs[0] * cache.probs[1];
    let d_logits = [-g, g];
    outer_acc(grads.w_out.data_mut(), &cache.hidden, &d_logits);
    grads.b_out.data_mut().iter_mut().zip(d_logits).for_each(|(b, v)| *b += v);

    let mut d_hidden = matvec(cp.w_out.data(), 2, &d_logits);
    if let Some(m) = &cache.mask {
        d_hidden.iter_mut().zip(m).for_each(|(h, &k)| *h *= k);
    }
    let d_pre: Vec<T> = d_hidden
        .iter()
        .zip(&cache.pre_hidden)
        .map(|(&g, &p)| g * act.derivative(p))
        .collect();
    outer_acc(grads.w_hidden.data_mut(), &cache.input, &d_pre);
    grads.b_hidden.data_mut().iter_mut().zip(&d_pre).for_each(|(b, &v)| *b += v);
    matvec(cp.w_hidden.data(), n_h, &d_pre)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, Param, Rng};
    use proptest::prelude::*;

    fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn tsim_examples() {
        let z = TensorParams::<f64>::zeros(2, 3);
        let t = tsim(&[1.0, 2.0, 3.0], &[0.5; 3], &[-1.0; 3], &z, Activation::Tanh).unwrap();
        assert!(t.out.iter().all(|v| v == &vec![0.0, 0.0]));

        let mut p = TensorParams::<f64>::zeros(1, 2);
        p.m[0].slice_mut(0).copy_from_slice(Tensor::<f64>::eye(2).data());
        let t = tsim(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], &p, Activation::Tanh).unwrap();
        assert!((t.qa()[0] - 0.76159).abs() < 1e-5);
        assert_eq!(t.q_ext(), &[0.0]);

        let mut rng = Rng::new(4);
        let p = TensorParams::<f64>::init(&mut rng, 2, 4);
        let (q, a, e) = (rand_vec(&mut rng, 4), rand_vec(&mut rng, 4), rand_vec(&mut rng, 4));
        let t = tsim(&q, &a, &e, &p, Activation::Tanh).unwrap();
        let oracle = |x: &[f64], m: &Tensor<f64>, y: &[f64]| -> Vec<f64> {
            bilinear(x, m, y).unwrap().data().iter().map(|v| v.tanh()).collect()
        };
        for (got, want) in [(t.qa(), oracle(&q, &p.m[0], &a)), (t.q_ext(), oracle(&q, &p.m[1], &e)), (t.a_ext(), oracle(&a, &p.m[2], &e))] {
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
        assert!(tsim(&q[..3], &a, &e, &p, Activation::Tanh).is_err());
    }

    #[test]
    fn tsim_bilinearity() {
        let mut rng = Rng::new(8);
        let mut p = TensorParams::<f64>::init(&mut rng, 2, 3);
        let (q, a, e) = (rand_vec(&mut rng, 3), rand_vec(&mut rng, 3), rand_vec(&mut rng, 3));
        let base = tsim(&q, &a, &e, &p, Activation::Identity).unwrap();
        let q2: Vec<f64> = q.iter().map(|v| 2.0 * v).collect();
        let doubled = tsim(&q2, &a, &e, &p, Activation::Identity).unwrap();
        for r in 0..2 {
            for (x, y) in base.out[r].iter().zip(&doubled.out[r]) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
        assert_eq!(base.out[2], doubled.out[2]);

        // Symmetrize M1 so swapping q and a leaves Tsim_qa unchanged.
        for s in 0..2 {
            let m = p.m[0].slice_mut(s);
            for i in 0..3 {
                for j in 0..i {
                    m[i * 3 + j] = m[j * 3 + i];
                }
            }
        }
        let x = tsim(&q, &a, &e, &p, Activation::Identity).unwrap();
        let y = tsim(&a, &q, &e, &p, Activation::Identity).unwrap();
        for (u, v) in x.qa().iter().zip(y.qa()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_layout() {
        let m = merge(&[1.0, 2.0], [&[9.0], &[8.0], &[7.0]], &[3.0, 4.0]);
        assert_eq!(m, vec![1.0, 2.0, 9.0, 8.0, 7.0, 3.0, 4.0]);
        let (cq, t, ca) = split_merge(&m, 2, 1);
        assert_eq!((cq, t, ca), (vec![1.0, 2.0], [vec![9.0], vec![8.0], vec![7.0]], vec![3.0, 4.0]));

        let z = vec![0.0; 100];
        assert_eq!(merge(&z, [&[0.0], &[0.0], &[0.0]], &z).len(), 203);
        let z3 = vec![0.0; 3];
        assert_eq!(merge(&z3, [&[0.0; 2], &[0.0; 2], &[0.0; 2]], &z3).len(), 12);
    }

    #[test]
    fn classifier_examples() {
        let mut cp = ClassifierParams::<f64>::zeros(5, 4);
        assert_eq!(classify(&[1.0; 5], &cp, Activation::Tanh, None).unwrap(), 0.5);
        cp.b_out = Tensor::vector(vec![0.0, 10.0]);
        let s = classify(&[0.3; 5], &cp, Activation::Tanh, None).unwrap();
        assert!((s - 0.9999546).abs() < 1e-7);
        assert!(classify(&[0.3; 4], &cp, Activation::Tanh, None).is_err());

        let mut rng = Rng::new(5);
        let cp = ClassifierParams::<f64>::init(&mut rng, 3, 2);
        let x = [0.2, -0.7, 1.1];
        let h: Vec<f64> = (0..2)
            .map(|j| (cp.b_hidden.data()[j] + (0..3).map(|i| cp.w_hidden.at(i, j) * x[i]).sum::<f64>()).tanh())
            .collect();
        let l: Vec<f64> = (0..2)
            .map(|c| cp.b_out.data()[c] + (0..2).map(|j| cp.w_out.at(j, c) * h[j]).sum::<f64>())
            .collect();
        let oracle = l[1].exp() / (l[0].exp() + l[1].exp());
        assert!((classify(&x, &cp, Activation::Tanh, None).unwrap() - oracle).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn score_is_strict_probability(seed in 0u64..1000, scale in 0.1f64..20.0) {
            let mut rng = Rng::new(seed);
            let cp = ClassifierParams::<f64>::init(&mut rng, 6, 5);
            let x: Vec<f64> = (0..6).map(|_| rng.uniform(-scale, scale)).collect();
            let s = classify(&x, &cp, Activation::Tanh, None).unwrap();
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn full_path_gradients() {
        let (d, k, n_h) = (4, 2, 3);
        let mut rng = Rng::new(31);
        let tp = TensorParams::<f64>::init(&mut rng, k, d);
        let cp = ClassifierParams::<f64>::init(&mut rng, 2 * d + 3 * k, n_h);
        let (q, a, e) = (rand_vec(&mut rng, d), rand_vec(&mut rng, d), rand_vec(&mut rng, d));
        let mask = vec![2.0, 0.0, 2.0];
        let f = Activation::Tanh;

        let forward = |tp: &TensorParams<f64>, cp: &ClassifierParams<f64>, q: &[f64], a: &[f64], e: &[f64]| {
            let t = tsim(q, a, e, tp, f).unwrap();
            let h = merge(q, [t.qa(), t.q_ext(), t.a_ext()], a);
            let (s, cache) = classify_forward(&h, cp, f, Some(&mask)).unwrap();
            (t, s, cache)
        };
        let (t, _, cache) = forward(&tp, &cp, &q, &a, &e);
        let mut tg = TensorParams::zeros(k, d);
        let mut cg = ClassifierParams::zeros(2 * d + 3 * k, n_h);
        let dh = classify_backward(&cache, 1.0, &cp, f, &mut cg);
        let (mut dq, dt, mut da) = split_merge(&dh, d, k);
        let ig = tsim_backward(&q, &a, &e, &t, &dt, &tp, f, &mut tg);
        dq.iter_mut().zip(&ig.c_q).for_each(|(x, y)| *x += y);
        da.iter_mut().zip(&ig.c_a).for_each(|(x, y)| *x += y);

        let mut set = Vec::new();
        for r in 0..3 {
            set.push(Param { name: RELATIONS[r].into(), value: tp.m[r].clone(), grad: tg.m[r].clone() });
        }
        for (n, v, g) in [
            ("W_hidden", &cp.w_hidden, &cg.w_hidden),
            ("b_hidden", &cp.b_hidden, &cg.b_hidden),
            ("W_out", &cp.w_out, &cg.w_out),
            ("b_out", &cp.b_out, &cg.b_out),
        ] {
            set.push(Param { name: n.into(), value: v.clone(), grad: g.clone() });
        }
        for (n, v, g) in [("c_q", &q, dq), ("c_a", &a, da), ("c_ext", &e, ig.c_ext)] {
            set.push(Param { name: n.into(), value: Tensor::vector(v.clone()), grad: Tensor::vector(g) });
        }
        let report = grad_check(&mut set, 1e-6, |s: &Vec<Param<f64>>| {
            let tp = TensorParams { m: [s[0].value.clone(), s[1].value.clone(), s[2].value.clone()] };
            let cp = ClassifierParams {
                w_hidden: s[3].value.clone(),
                b_hidden: s[4].value.clone(),
                w_out: s[5].value.clone(),
                b_out: s[6].value.clone(),
            };
            Ok(forward(&tp, &cp, s[7].value.data(), s[8].value.data(), s[9].value.data()).1)
        })
        .unwrap();
        for e in report {
            assert!(e.max_rel_error < 1e-4, "{}: {}", e.name, e.max_rel_error);
        }
    }
}
