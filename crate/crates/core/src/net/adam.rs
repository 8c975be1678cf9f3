use super::model::{ConvNet, Gradients};
use super::real::Real;
use crate::error::{Error, Result};

pub const ADAM_LR: f64 = 0.001;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment accumulators shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &ConvNet<T>) -> Self {
        let zeros: Vec<Vec<T>> = net.params().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            lr: ADAM_LR,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn adam_step<T: Real>(net: &mut ConvNet<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
    let shapes_match = net.params().count() == state.m.len()
        && grads.slices().count() == state.m.len()
        && net
            .params()
            .zip(grads.slices())
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_match {
        return Err(Error::InvalidParameter(
            "gradients or optimizer state do not match the network shape".into(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::of(state.beta1);
    let b2 = T::of(state.beta2);
    let one = T::one();
    let correction1 = T::of(1.0 - state.beta1.powi(t));
    let correction2 = T::of(1.0 - state.beta2.powi(t));
    let lr = T::of(state.lr);
    let eps = T::of(state.eps);

    for (((param, grad), m), v) in net
        .params_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
