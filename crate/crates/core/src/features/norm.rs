use crate::error::{Error, Result};
use crate::numkit::{matvec_t_acc, outer_acc, xavier_uniform, Activation, Rng, Scalar, Tensor};

/// Dense layer `c_ext = α(w_hᵀ·x + b)` over a feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNormParams<T> {
    /// `[|F| × d]`.
    pub w_h: Tensor<T>,
    pub b: Tensor<T>,
    pub alpha: Activation,
}

impl<T: Scalar> FeatureNormParams<T> {
    pub fn zeros(features: usize, d: usize, alpha: Activation) -> Self {
        FeatureNormParams {
            w_h: Tensor::zeros(&[features, d]),
            b: Tensor::zeros(&[d]),
            alpha,
        }
    }

    pub fn init(rng: &mut Rng, features: usize, d: usize, alpha: Activation) -> Self {
        FeatureNormParams {
            w_h: xavier_uniform(rng, &[features, d], features, d),
            b: Tensor::zeros(&[d]),
            alpha,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

/// Returns `(c_ext, pre-activation)`.
pub fn normalize_forward<T: Scalar>(fv: &[T], p: &FeatureNormParams<T>) -> Result<(Vec<T>, Vec<T>)> {
    let d = p.dim();
    if p.w_h.rank() != 2 || p.w_h.shape()[0] != fv.len() || p.w_h.shape()[1] != d {
        return Err(Error::shape("normalize_features", p.w_h.shape(), &[fv.len(), d]));
    }
    let mut pre = p.b.data().to_vec();
    matvec_t_acc(p.w_h.data(), d, fv, &mut pre);
    let out = pre.iter().map(|&v| p.alpha.apply(v)).collect();
    Ok((out, pre))
}

pub fn normalize_features<T: Scalar>(fv: &[T], p: &FeatureNormParams<T>) -> Result<Tensor<T>> {
    Ok(Tensor::vector(normalize_forward(fv, p)?.0))
}

/// Accumulates `w_h`/`b` gradients. The features themselves are constants.
pub fn normalize_backward<T: Scalar>(fv: &[T], pre: &[T], d_out: &[T], p: &FeatureNormParams<T>, grads: &mut FeatureNormParams<T>) {
    let d_pre: Vec<T> = d_out.iter().zip(pre).map(|(&g, &z)| g * p.alpha.derivative(z)).collect();
    outer_acc(grads.w_h.data_mut(), fv, &d_pre);
    grads.b.data_mut().iter_mut().zip(&d_pre).for_each(|(b, &g)| *b += g);
}
