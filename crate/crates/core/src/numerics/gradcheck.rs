use alloc::vec::Vec;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Central-difference estimate of `df/dparam` for every scalar in `params`.
///
/// `f` is evaluated twice per coordinate with that coordinate shifted by
/// `+eps` and `-eps`; all other values are left as given.
pub fn finite_difference_gradient<F>(mut f: F, params: &ParamSet, eps: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let n = params.get(id).value.len();
        let mut g = Tensor::zeros(params.get(id).value.shape());
        for i in 0..n {
            let x0 = params.get(id).value.data()[i];
            work.get_mut(id).value.data_mut()[i] = x0 + eps;
            let fp = f(&work)?;
            work.get_mut(id).value.data_mut()[i] = x0 - eps;
            let fm = f(&work)?;
            work.get_mut(id).value.data_mut()[i] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(alloc::format!("objective at `{}`[{i}]", params.get(id).name)));
            }
            g.data_mut()[i] = (fp - fm) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}
