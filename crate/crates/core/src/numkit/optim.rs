use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// A named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Per-parameter Adam moments and hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments with the usual defaults (β₁ 0.9, β₂ 0.999, ε 1e-8).
    pub fn new(shape: &[usize], learning_rate: f64) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// Bias-corrected Adam update of `value` from `grad`. The gradient is left
/// untouched; callers zero it.
pub fn adam_update<T: Scalar>(
    name: &str,
    value: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if value.shape() != grad.shape() || state.m.shape() != value.shape() {
        return Err(Error::shape("adam_step", value.shape(), grad.shape()));
    }
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = T::lit(state.beta1);
    let b2 = T::lit(state.beta2);
    let c1 = T::one() - T::lit(state.beta1.powi(t));
    let c2 = T::one() - T::lit(state.beta2.powi(t));
    let lr = T::lit(state.learning_rate);
    let eps = T::lit(state.epsilon);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((theta, &g), mi), vi) in value
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *mi = b1 * *mi + (T::one() - b1) * g;
        *vi = b2 * *vi + (T::one() - b2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

pub fn adam_step<T: Scalar>(param: &mut Param<T>, state: &mut AdamState<T>) -> Result<()> {
    adam_update(&param.name, &mut param.value, &param.grad, state)
}

/// `λ · Σ‖θ‖²` over exactly the given parameters.
pub fn l2_penalty<T: Scalar>(params: &[&Param<T>], lambda: f64) -> T {
    let total: T = params.iter().map(|p| p.value.sum_sq()).sum();
    T::lit(lambda) * total
}

/// As [`l2_penalty`], also adding `2λθ` into each gradient.
pub fn l2_penalty_with_grad<T: Scalar>(params: &mut [&mut Param<T>], lambda: f64) -> T {
    let lam = T::lit(lambda);
    let mut total = T::zero();
    for p in params.iter_mut() {
        total += p.value.sum_sq();
        for (g, &v) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
            *g += (lam + lam) * v;
        }
    }
    lam * total
}
