//! Adam with bias correction, over the canonical parameter flattening.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gru::GruParameters;

/// First/second moment accumulators, one vector per parameter slice in
/// [`GruParameters::param_slices`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn for_params(params: &GruParameters) -> Self {
        let shapes: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place. Aborts on non-finite gradients.
pub fn adam_step(
    params: &mut GruParameters,
    grads: &GruParameters,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    for (i, slice) in grads.param_slices().iter().enumerate() {
        if let Some(bad) = slice.iter().find(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient {bad} in parameter block {i}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    let grad_slices = grads.param_slices();
    for ((target, grad), (m, v)) in params
        .param_slices_mut()
        .into_iter()
        .zip(grad_slices)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for j in 0..target.len() {
            let g = grad[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            target[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
