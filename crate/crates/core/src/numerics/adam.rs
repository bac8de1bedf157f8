use alloc::vec::Vec;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Adam moments and hyperparameters for one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the usual `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState { step: 0, m: zeros(), v: zeros(), lr, beta1, beta2, eps }
    }
}

/// One bias-corrected Adam update from the accumulated gradients, which are
/// zeroed afterwards. Nothing is modified if any gradient is non-finite.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    if state.lr < 0.0 || !state.lr.is_finite() {
        return Err(Error::invalid(alloc::format!("learning rate {}", state.lr)));
    }
    if state.m.len() != params.len() {
        return Err(Error::shape("optimizer state does not match parameter set"));
    }
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFiniteGrad(p.name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - math::powi(b1, t);
    let c2 = 1.0 - math::powi(b2, t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.data();
        let value = p.value.data_mut();
        for (((x, &g), m), v) in value.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= state.lr * m_hat / (math::sqrt(v_hat) + state.eps);
        }
    }
    params.zero_grads();
    Ok(())
}
