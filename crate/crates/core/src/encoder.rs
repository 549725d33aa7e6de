//! LSTM cell, bidirectional encoder and max/average pooling.
//!
//! The cell is the standard one without peepholes:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
//! o = σ(W_o x + U_o h + b_o)    g = tanh(W_g x + U_g h + b_g)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{matvec, matvec_t_acc, outer_acc, xavier_uniform, Rng, Scalar, Tensor};

const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Weights of one unidirectional LSTM. Gate order everywhere is `i, f, o, g`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    /// Input-to-gate weights, each `hidden × input`.
    pub w: [Tensor<T>; 4],
    /// Recurrent weights, each `hidden × hidden`.
    pub u: [Tensor<T>; 4],
    /// Biases, each `hidden`.
    pub b: [Tensor<T>; 4],
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            w: std::array::from_fn(|_| Tensor::zeros(&[hidden_dim, input_dim])),
            u: std::array::from_fn(|_| Tensor::zeros(&[hidden_dim, hidden_dim])),
            b: std::array::from_fn(|_| Tensor::zeros(&[hidden_dim])),
        }
    }

    /// Glorot-uniform weights, zero biases, forget-gate bias 1.
    pub fn init(rng: &mut Rng, input_dim: usize, hidden_dim: usize) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        for k in 0..4 {
            p.w[k] = xavier_uniform(rng, &[hidden_dim, input_dim], input_dim, hidden_dim);
            p.u[k] = xavier_uniform(rng, &[hidden_dim, hidden_dim], hidden_dim, hidden_dim);
        }
        p.b[1].fill(T::one());
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w[0].shape()[0]
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(12);
        for (k, g) in GATES.iter().enumerate() {
            out.push((format!("W_{g}"), &self.w[k]));
            out.push((format!("U_{g}"), &self.u[k]));
            out.push((format!("b_{g}"), &self.b[k]));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::with_capacity(12);
        for ((k, w), (u, b)) in self.w.iter_mut().enumerate().zip(self.u.iter_mut().zip(self.b.iter_mut())) {
            out.push((format!("W_{}", GATES[k]), w));
            out.push((format!("U_{}", GATES[k]), u));
            out.push((format!("b_{}", GATES[k]), b));
        }
        out
    }
}

/// Forward and backward cells of a biLSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams<T> {
    pub fwd: LstmParams<T>,
    pub bwd: LstmParams<T>,
}

impl<T: Scalar> BiLstmParams<T> {
    pub fn init(rng: &mut Rng, input_dim: usize, hidden_dim: usize) -> Self {
        let fwd = LstmParams::init(rng, input_dim, hidden_dim);
        let bwd = LstmParams::init(rng, input_dim, hidden_dim);
        BiLstmParams { fwd, bwd }
    }

    pub fn zeros_like(&self) -> Self {
        let (d, h) = (self.fwd.input_dim(), self.fwd.hidden_dim());
        BiLstmParams {
            fwd: LstmParams::zeros(d, h),
            bwd: LstmParams::zeros(d, h),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<_> = self.fwd.named().into_iter().map(|(n, t)| (format!("fwd.{n}"), t)).collect();
        out.extend(self.bwd.named().into_iter().map(|(n, t)| (format!("bwd.{n}"), t)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<_> = self.fwd.named_mut().into_iter().map(|(n, t)| (format!("fwd.{n}"), t)).collect();
        out.extend(self.bwd.named_mut().into_iter().map(|(n, t)| (format!("bwd.{n}"), t)));
        out
    }
}

/// Activations of one cell step kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmStepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    gates: [Vec<T>; 4],
    tanh_c: Vec<T>,
    h: Vec<T>,
    c: Vec<T>,
}

fn check_step<T: Scalar>(x: &[T], h_prev: &[T], c_prev: &[T], p: &LstmParams<T>) -> Result<()> {
    let (d, h) = (p.input_dim(), p.hidden_dim());
    if x.len() != d {
        return Err(Error::shape("lstm_step input", &[x.len()], &[d]));
    }
    if h_prev.len() != h || c_prev.len() != h {
        return Err(Error::shape("lstm_step state", &[h_prev.len(), c_prev.len()], &[h, h]));
    }
    Ok(())
}

fn step_cached<T: Scalar>(x: &[T], h_prev: &[T], c_prev: &[T], p: &LstmParams<T>) -> LstmStepCache<T> {
    let (d, h) = (p.input_dim(), p.hidden_dim());
    let gates: [Vec<T>; 4] = std::array::from_fn(|k| {
        let mut a = matvec(p.w[k].data(), d, x);
        let r = matvec(p.u[k].data(), h, h_prev);
        for ((ai, &ri), &bi) in a.iter_mut().zip(&r).zip(p.b[k].data()) {
            *ai += ri + bi;
        }
        let act = if k == 3 { tanh::<T> } else { sigmoid::<T> };
        a.into_iter().map(act).collect()
    });
    let c: Vec<T> = (0..h)
        .map(|j| gates[1][j] * c_prev[j] + gates[0][j] * gates[3][j])
        .collect();
    let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
    let hv = (0..h).map(|j| gates[2][j] * tanh_c[j]).collect();
    LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        tanh_c,
        h: hv,
        c,
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    crate::numkit::Activation::Sigmoid.apply(v)
}

fn tanh<T: Scalar>(v: T) -> T {
    v.tanh()
}

/// One LSTM step, returning `(h, c)`.
pub fn lstm_step<T: Scalar>(x: &[T], h_prev: &[T], c_prev: &[T], p: &LstmParams<T>) -> Result<(Vec<T>, Vec<T>)> {
    check_step(x, h_prev, c_prev, p)?;
    let cache = step_cached(x, h_prev, c_prev, p);
    Ok((cache.h, cache.c))
}

/// Backpropagates `dh`/`dc` (total upstream into this step's outputs).
/// Accumulates weight gradients into `grads`, adds the input gradient into
/// `dx` when given, and returns `(dh_prev, dc_prev)`.
fn step_backward<T: Scalar>(
    cache: &LstmStepCache<T>,
    dh: &[T],
    dc_in: &[T],
    p: &LstmParams<T>,
    grads: &mut LstmParams<T>,
    dx: Option<&mut [T]>,
) -> (Vec<T>, Vec<T>) {
    let (d, h) = (p.input_dim(), p.hidden_dim());
    let [i, f, o, g] = &cache.gates;
    let one = T::one();
    let mut da: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); h]);
    let mut dc_prev = vec![T::zero(); h];
    for j in 0..h {
        let tc = cache.tanh_c[j];
        let d_o = dh[j] * tc;
        let dc = dh[j] * o[j] * (one - tc * tc) + dc_in[j];
        let d_i = dc * g[j];
        let d_g = dc * i[j];
        let d_f = dc * cache.c_prev[j];
        dc_prev[j] = dc * f[j];
        da[0][j] = d_i * i[j] * (one - i[j]);
        da[1][j] = d_f * f[j] * (one - f[j]);
        da[2][j] = d_o * o[j] * (one - o[j]);
        da[3][j] = d_g * (one - g[j] * g[j]);
    }
    let mut dh_prev = vec![T::zero(); h];
    let mut dx = dx;
    for k in 0..4 {
        outer_acc(grads.w[k].data_mut(), &da[k], &cache.x);
        outer_acc(grads.u[k].data_mut(), &da[k], &cache.h_prev);
        for (b, &a) in grads.b[k].data_mut().iter_mut().zip(&da[k]) {
            *b += a;
        }
        matvec_t_acc(p.u[k].data(), h, &da[k], &mut dh_prev);
        if let Some(dx) = dx.as_deref_mut() {
            matvec_t_acc(p.w[k].data(), d, &da[k], dx);
        }
    }
    (dh_prev, dc_prev)
}

/// Per-timestep biLSTM states `[T × 2h]`: columns `[0, h)` hold the forward
/// pass, `[h, 2h)` the backward pass aligned to the same timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmOutput<T> {
    pub states: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct BiLstmCache<T> {
    fwd: Vec<LstmStepCache<T>>,
    /// Backward-cell steps in processing order (timestep `T−1` first).
    bwd: Vec<LstmStepCache<T>>,
}

fn scan<T: Scalar>(seq: &Tensor<T>, p: &LstmParams<T>, order: impl Iterator<Item = usize>) -> Vec<LstmStepCache<T>> {
    let h = p.hidden_dim();
    let mut hs = vec![T::zero(); h];
    let mut cs = vec![T::zero(); h];
    let mut steps = Vec::with_capacity(seq.rows());
    for t in order {
        let cache = step_cached(seq.row(t), &hs, &cs, p);
        hs.clone_from(&cache.h);
        cs.clone_from(&cache.c);
        steps.push(cache);
    }
    steps
}

pub fn bilstm_forward<T: Scalar>(seq: &Tensor<T>, p: &BiLstmParams<T>) -> Result<(BiLstmOutput<T>, BiLstmCache<T>)> {
    if seq.rank() != 2 || seq.rows() == 0 {
        return Err(Error::EmptyInput("bilstm"));
    }
    let d = p.fwd.input_dim();
    if seq.shape()[1] != d || p.bwd.input_dim() != d || p.bwd.hidden_dim() != p.fwd.hidden_dim() {
        return Err(Error::shape("bilstm", seq.shape(), &[seq.rows(), d]));
    }
    let n = seq.rows();
    let h = p.fwd.hidden_dim();
    let fwd = scan(seq, &p.fwd, 0..n);
    let bwd = scan(seq, &p.bwd, (0..n).rev());
    let mut states = Tensor::zeros(&[n, 2 * h]);
    for t in 0..n {
        let row = states.row_mut(t);
        row[..h].copy_from_slice(&fwd[t].h);
        row[h..].copy_from_slice(&bwd[n - 1 - t].h);
    }
    Ok((BiLstmOutput { states }, BiLstmCache { fwd, bwd }))
}

/// Runs the forward cell left-to-right and the backward cell right-to-left
/// from zero states.
pub fn bilstm<T: Scalar>(seq: &Tensor<T>, fwd: &LstmParams<T>, bwd: &LstmParams<T>) -> Result<BiLstmOutput<T>> {
    let p = BiLstmParams {
        fwd: fwd.clone(),
        bwd: bwd.clone(),
    };
    Ok(bilstm_forward(seq, &p)?.0)
}

/// Backpropagates `d_states` (`[T × 2h]`). Returns the gradient of the
/// input sequence when `want_input_grad` is set.
pub fn bilstm_backward<T: Scalar>(
    cache: &BiLstmCache<T>,
    d_states: &Tensor<T>,
    p: &BiLstmParams<T>,
    grads: &mut BiLstmParams<T>,
    want_input_grad: bool,
) -> Option<Tensor<T>> {
    let n = cache.fwd.len();
    let h = p.fwd.hidden_dim();
    let d = p.fwd.input_dim();
    let mut d_seq = want_input_grad.then(|| Tensor::zeros(&[n, d]));

    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    for t in (0..n).rev() {
        let dh: Vec<T> = d_states.row(t)[..h].iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
        let dx = d_seq.as_mut().map(|s| s.row_mut(t));
        (dh_next, dc_next) = step_backward(&cache.fwd[t], &dh, &dc_next, &p.fwd, &mut grads.fwd, dx);
    }

    dh_next.fill(T::zero());
    dc_next.fill(T::zero());
    // The backward cell processed timesteps n−1, …, 0; undo that in reverse.
    for s in (0..n).rev() {
        let t = n - 1 - s;
        let dh: Vec<T> = d_states.row(t)[h..].iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
        let dx = d_seq.as_mut().map(|q| q.row_mut(t));
        (dh_next, dc_next) = step_backward(&cache.bwd[s], &dh, &dc_next, &p.bwd, &mut grads.bwd, dx);
    }
    d_seq
}

/// Pooling over timesteps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Average,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Max => "max",
            Pooling::Average => "average",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "average" | "avg" | "mean" => Ok(Pooling::Average),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    mode: Pooling,
    rows: usize,
    /// Winning row per column (max pooling only); first wins on ties.
    argmax: Vec<usize>,
}

impl PoolCache {
    /// Winning timestep per column; empty for average pooling.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn pool_forward<T: Scalar>(states: &Tensor<T>, mode: Pooling) -> Result<(Vec<T>, PoolCache)> {
    if states.rank() != 2 || states.rows() == 0 {
        return Err(Error::EmptyInput("pool"));
    }
    let (n, d) = (states.rows(), states.shape()[1]);
    let mut out = states.row(0).to_vec();
    let mut argmax = Vec::new();
    match mode {
        Pooling::Max => {
            argmax = vec![0; d];
            for t in 1..n {
                for (j, &v) in states.row(t).iter().enumerate() {
                    if v > out[j] {
                        out[j] = v;
                        argmax[j] = t;
                    }
                }
            }
        }
        Pooling::Average => {
            for t in 1..n {
                for (o, &v) in out.iter_mut().zip(states.row(t)) {
                    *o += v;
                }
            }
            let inv = T::one() / T::lit(n as f64);
            out.iter_mut().for_each(|o| *o *= inv);
        }
    }
    Ok((out, PoolCache { mode, rows: n, argmax }))
}

/// Columnwise max or mean over timesteps.
pub fn pool<T: Scalar>(states: &Tensor<T>, mode: Pooling) -> Result<Tensor<T>> {
    Ok(Tensor::vector(pool_forward(states, mode)?.0))
}

pub fn pool_backward<T: Scalar>(cache: &PoolCache, d_out: &[T]) -> Tensor<T> {
    let d = d_out.len();
    let mut g = Tensor::zeros(&[cache.rows, d]);
    match cache.mode {
        Pooling::Max => {
            for (j, &t) in cache.argmax.iter().enumerate() {
                g.row_mut(t)[j] += d_out[j];
            }
        }
        Pooling::Average => {
            let inv = T::one() / T::lit(cache.rows as f64);
            for t in 0..cache.rows {
                for (gv, &dv) in g.row_mut(t).iter_mut().zip(d_out) {
                    *gv = dv * inv;
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, Param};
    use crate::numkit::Rng;
    use proptest::prelude::*;

    fn random_seq(rng: &mut Rng, n: usize, d: usize) -> Tensor<f64> {
        rng.uniform_tensor(&[n, d], 1.0)
    }

    /// Independent scalar implementation of one cell step.
    fn scalar_step(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams<f64>) -> (Vec<f64>, Vec<f64>) {
        let hd = h.len();
        let pre = |k: usize, j: usize| {
            let mut s = p.b[k].data()[j];
            for (m, xm) in x.iter().enumerate() {
                s += p.w[k].at(j, m) * xm;
            }
            for (m, hm) in h.iter().enumerate() {
                s += p.u[k].at(j, m) * hm;
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hn = vec![0.0; hd];
        let mut cn = vec![0.0; hd];
        for j in 0..hd {
            let i = sig(pre(0, j));
            let f = sig(pre(1, j));
            let o = sig(pre(2, j));
            let g = pre(3, j).tanh();
            cn[j] = f * c[j] + i * g;
            hn[j] = o * cn[j].tanh();
        }
        (hn, cn)
    }

    #[test]
    fn zero_cell_stays_zero() {
        let p = LstmParams::<f64>::zeros(3, 2);
        let (h, c) = lstm_step(&[0.4, -1.0, 2.0], &[0.0; 2], &[0.0; 2], &p).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn saturated_gates_carry_memory() {
        let mut p = LstmParams::<f64>::zeros(3, 2);
        p.b[1].fill(50.0);
        p.b[0].fill(-50.0);
        let c_prev = [0.7, -0.3];
        let (_, c) = lstm_step(&[1.0, 2.0, 3.0], &[0.1, 0.2], &c_prev, &p).unwrap();
        for (a, b) in c.iter().zip(c_prev) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_matches_scalar_loop() {
        let mut rng = Rng::new(3);
        let p = LstmParams::<f64>::init(&mut rng, 3, 2);
        let x = [0.3, -0.8, 1.1];
        let h = [0.2, -0.4];
        let c = [0.5, 0.1];
        let (h1, c1) = lstm_step(&x, &h, &c, &p).unwrap();
        let (h2, c2) = scalar_step(&x, &h, &c, &p);
        for j in 0..2 {
            assert!((h1[j] - h2[j]).abs() < 1e-12 && (c1[j] - c2[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let p = LstmParams::<f64>::zeros(3, 2);
        assert!(lstm_step(&[1.0, 2.0], &[0.0; 2], &[0.0; 2], &p).is_err());
        assert!(lstm_step(&[1.0, 2.0, 3.0], &[0.0; 3], &[0.0; 2], &p).is_err());
    }

    #[test]
    fn single_step_with_shared_params_is_symmetric() {
        let mut rng = Rng::new(9);
        let p = LstmParams::<f64>::init(&mut rng, 4, 3);
        let seq = random_seq(&mut rng, 1, 4);
        let out = bilstm(&seq, &p, &p).unwrap();
        assert_eq!(out.states.row(0)[..3], out.states.row(0)[3..]);
    }

    fn plain_scan(seq: &Tensor<f64>, p: &LstmParams<f64>) -> Vec<Vec<f64>> {
        let h = p.hidden_dim();
        let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
        let mut out = Vec::new();
        for t in 0..seq.rows() {
            let (hn, cn) = scalar_step(seq.row(t), &hs, &cs, p);
            out.push(hn.clone());
            hs = hn;
            cs = cn;
        }
        out
    }

    #[test]
    fn halves_decompose_into_scans() {
        let mut rng = Rng::new(11);
        let p = BiLstmParams::<f64>::init(&mut rng, 3, 2);
        let seq = random_seq(&mut rng, 5, 3);
        let out = bilstm(&seq, &p.fwd, &p.bwd).unwrap();
        let fwd = plain_scan(&seq, &p.fwd);
        let mut rev = Tensor::zeros(&[5, 3]);
        for t in 0..5 {
            rev.row_mut(t).copy_from_slice(seq.row(4 - t));
        }
        let bwd_of_rev = plain_scan(&rev, &p.bwd);
        for t in 0..5 {
            for j in 0..2 {
                assert!((out.states.row(t)[j] - fwd[t][j]).abs() < 1e-12);
                assert!((out.states.row(t)[2 + j] - bwd_of_rev[4 - t][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooling_examples() {
        let s = Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(pool(&s, Pooling::Max).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(pool(&s, Pooling::Average).unwrap().data(), &[1.5, 1.5]);
        let one = Tensor::from_rows(&[vec![0.25, -4.0]]).unwrap();
        assert_eq!(pool(&one, Pooling::Max).unwrap(), Tensor::vector(vec![0.25, -4.0]));
        assert_eq!(pool(&one, Pooling::Average).unwrap(), Tensor::vector(vec![0.25, -4.0]));
        assert!(pool(&Tensor::<f64>::zeros(&[0, 2]), Pooling::Max).is_err());
    }

    proptest! {
        #[test]
        fn states_bounded_and_shaped(seed in 0u64..500, n in 1usize..9) {
            let mut rng = Rng::new(seed);
            let p = BiLstmParams::<f64>::init(&mut rng, 4, 3);
            let seq = rng.uniform_tensor(&[n, 4], 5.0);
            let out = bilstm(&seq, &p.fwd, &p.bwd).unwrap();
            prop_assert_eq!(out.states.shape(), &[n, 6]);
            prop_assert!(out.states.data().iter().all(|v| v.abs() < 1.0));
        }

        #[test]
        fn pooling_properties(seed in 0u64..500, n in 1usize..8) {
            let mut rng = Rng::new(seed);
            let s: Tensor<f64> = rng.uniform_tensor(&[n, 5], 3.0);
            let mx = pool(&s, Pooling::Max).unwrap();
            for t in 0..n {
                for j in 0..5 {
                    prop_assert!(mx.data()[j] >= s.row(t)[j]);
                }
            }
            let mut rev = Tensor::zeros(&[n, 5]);
            for t in 0..n {
                rev.row_mut(t).copy_from_slice(s.row(n - 1 - t));
            }
            let a = pool(&s, Pooling::Average).unwrap();
            let b = pool(&rev, Pooling::Average).unwrap();
            for j in 0..5 {
                prop_assert!((a.data()[j] - b.data()[j]).abs() < 1e-12);
            }
        }
    }

    fn check_gradients(mode: Pooling) {
        let mut rng = Rng::new(21);
        let p = BiLstmParams::<f64>::init(&mut rng, 3, 2);
        let seq = random_seq(&mut rng, 4, 3);
        let weights: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let loss = |p: &BiLstmParams<f64>, seq: &Tensor<f64>| -> f64 {
            let (out, _) = bilstm_forward(seq, p).unwrap();
            let (pooled, _) = pool_forward(&out.states, mode).unwrap();
            pooled.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };

        let (out, cache) = bilstm_forward(&seq, &p).unwrap();
        let (_, pc) = pool_forward(&out.states, mode).unwrap();
        let d_states = pool_backward(&pc, &weights);
        let mut grads = p.zeros_like();
        let d_seq = bilstm_backward(&cache, &d_states, &p, &mut grads, true).unwrap();

        let mut set: Vec<Param<f64>> = p
            .named()
            .into_iter()
            .zip(grads.named())
            .map(|((n, v), (_, g))| Param {
                name: n,
                value: v.clone(),
                grad: g.clone(),
            })
            .collect();
        set.push(Param {
            name: "input".into(),
            value: seq.clone(),
            grad: d_seq,
        });
        let rebuild = |s: &Vec<Param<f64>>| -> (BiLstmParams<f64>, Tensor<f64>) {
            let mut q = p.clone();
            for ((_, t), src) in q.named_mut().into_iter().zip(s.iter()) {
                *t = src.value.clone();
            }
            (q, s.last().unwrap().value.clone())
        };
        let report = grad_check(&mut set, 1e-6, |s: &Vec<Param<f64>>| {
            let (q, x) = rebuild(s);
            Ok(loss(&q, &x))
        })
        .unwrap();
        for e in report {
            assert!(e.max_rel_error < 1e-4, "{mode}: {} rel err {} ({} vs {})", e.name, e.max_rel_error, e.analytic, e.numeric);
        }
    }

    #[test]
    fn gradients_pass_finite_differences_max() {
        check_gradients(Pooling::Max);
    }

    #[test]
    fn gradients_pass_finite_differences_average() {
        check_gradients(Pooling::Average);
    }
}
