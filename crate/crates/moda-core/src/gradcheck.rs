//! Central finite differences for gradient verification.
//!
//! Deliberately independent of [`Graph::backward`](crate::autodiff::Graph):
//! the derivative of a scalar-valued function of the parameter store is
//! estimated by perturbing one stored scalar at a time and re-running the
//! forward computation.

use crate::error::Result;
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use std::collections::HashMap;

/// Central-difference gradient of `f` with respect to every scalar of the
/// listed parameters. `f` must be a pure function of the store contents.
pub fn finite_difference<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    step: f64,
    mut f: F,
) -> Result<HashMap<ParamId, Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut out = HashMap::new();
    for &id in ids {
        let original = store.value(id).clone();
        let mut grad = Vec::with_capacity(original.len());
        for k in 0..original.len() {
            let mut plus = original.data().to_vec();
            plus[k] += step;
            store.set_value(id, Tensor::new(original.shape().to_vec(), plus)?)?;
            let f_plus = f(store)?;

            let mut minus = original.data().to_vec();
            minus[k] -= step;
            store.set_value(id, Tensor::new(original.shape().to_vec(), minus)?)?;
            let f_minus = f(store)?;

            grad.push((f_plus - f_minus) / (2.0 * step));
        }
        store.set_value(id, original.clone())?;
        out.insert(id, Tensor::new(original.shape().to_vec(), grad)?);
    }
    Ok(out)
}

/// Largest relative error between two gradients, with an absolute floor so
/// near-zero entries compare absolutely.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs()).max(floor);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}
