use super::{ParamSet, Real, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
    pub step: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        AdamState {
            first: zeros(),
            second: zeros(),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update. Gradients are validated before any
/// parameter is touched, so a rejected step leaves `params` and `state`
/// unchanged.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Numeric(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(shape_err!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        ));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(shape_err!(
                "gradient for {name} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            ));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(c.beta1);
    let b2 = T::from_f64_lossy(c.beta2);
    let one = T::one();
    let correction1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
    let correction2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
    let eps = T::from_f64_lossy(c.eps);
    let lr = T::from_f64_lossy(lr);

    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for ((w, &g), (mi, vi)) in p
            .data_mut()
            .iter_mut()
            .zip(grads[i].data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let m_hat = *mi / correction1;
            let v_hat = *vi / correction2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
