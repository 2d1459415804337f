//! Adam with bias correction.

use crate::error::Result;
use crate::nn::params::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: ParamSet,
    second_moment: ParamSet,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh zeroed moments congruent with `params`. Defaults:
    /// beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        AdamState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One in-place Adam update of `params` from `grads`.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    params.ensure_congruent(grads, "adam_step")?;
    params.ensure_congruent(&state.first_moment, "adam_step moments")?;
    grads.ensure_finite("adam_step gradients")?;

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);

    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        let p = p.data_mut();
        let g = g.data();
        let m = m.data_mut();
        let v = v.data_mut();
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
