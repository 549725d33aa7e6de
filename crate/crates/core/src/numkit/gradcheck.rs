use crate::error::{Error, Result};

use super::{Param, Scalar, Tensor};

/// Indexed access to a collection of named parameters and their gradients.
pub trait ParamSet<T> {
    fn param_count(&self) -> usize;
    fn param_name(&self, i: usize) -> String;
    fn param_value(&self, i: usize) -> &Tensor<T>;
    fn param_value_mut(&mut self, i: usize) -> &mut Tensor<T>;
    fn param_grad(&self, i: usize) -> &Tensor<T>;
}

impl<T> ParamSet<T> for Vec<Param<T>> {
    fn param_count(&self) -> usize {
        self.len()
    }
    fn param_name(&self, i: usize) -> String {
        self[i].name.clone()
    }
    fn param_value(&self, i: usize) -> &Tensor<T> {
        &self[i].value
    }
    fn param_value_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self[i].value
    }
    fn param_grad(&self, i: usize) -> &Tensor<T> {
        &self[i].grad
    }
}

/// Result of checking one parameter tensor.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Relative error of every coordinate, in storage order.
    pub rel_errors: Vec<f64>,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradients currently stored in `state` against
/// central differences of `loss`, coordinate by coordinate.
///
/// `loss` must be deterministic. Values are restored after each probe.
pub fn grad_check<T, S, F>(state: &mut S, eps: f64, mut loss: F) -> Result<Vec<GradCheckEntry>>
where
    T: Scalar,
    S: ParamSet<T> + ?Sized,
    F: FnMut(&S) -> Result<T>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let step = T::lit(eps);
    let mut entries = Vec::with_capacity(state.param_count());
    for pi in 0..state.param_count() {
        let name = state.param_name(pi);
        let analytic: Vec<f64> = state.param_grad(pi).data().iter().map(|g| g.as_f64()).collect();
        let mut entry = GradCheckEntry {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_errors: Vec::with_capacity(analytic.len()),
        };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = state.param_value(pi).data()[i];
            state.param_value_mut(pi).data_mut()[i] = orig + step;
            let plus = loss(state);
            state.param_value_mut(pi).data_mut()[i] = orig - step;
            let minus = loss(state);
            state.param_value_mut(pi).data_mut()[i] = orig;
            let (plus, minus) = (plus?.as_f64(), minus?.as_f64());
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while probing {name}[{i}]: f(+)={plus}, f(-)={minus}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = relative_error(a, numeric);
            if rel > entry.max_rel_error || entry.rel_errors.is_empty() {
                entry.max_rel_error = rel;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
            entry.rel_errors.push(rel);
        }
        entries.push(entry);
    }
    Ok(entries)
}
