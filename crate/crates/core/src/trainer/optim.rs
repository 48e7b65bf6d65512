use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::numerics::{ParameterSet, Real, Tensor};

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`;
/// later steps stay at `lr_min`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return lr_min;
    }
    let frac = step as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + Float::cos(core::f64::consts::PI * frac))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn zeros_like(params: &ParameterSet<T>) -> Self {
        let z: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            first: z.clone(),
            second: z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {0:?}")]
    NonFinite(String),
    #[error("optimizer state does not match the parameter list")]
    Shape,
    #[error("Adam steps are counted from 1")]
    StepZero,
}

/// One Adam update with bias correction and decoupled weight decay, reading
/// gradients from `params[i].grad`. `step` is the 1-based update count.
/// Nothing is modified when any gradient is non-finite.
pub fn adam_step<T: Real>(
    params: &mut ParameterSet<T>,
    state: &mut AdamState<T>,
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    if step == 0 {
        return Err(OptimError::StepZero);
    }
    if state.first.len() != params.len() || state.second.len() != params.len() {
        return Err(OptimError::Shape);
    }
    for (p, (m, v)) in params.iter().zip(state.first.iter().zip(&state.second)) {
        if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(OptimError::Shape);
        }
        if !p.grad.all_finite() {
            return Err(OptimError::NonFinite(p.name.clone()));
        }
    }
    let t = step.min(i32::MAX as u64) as i32;
    let bc1 = T::lit(1.0 - Float::powi(cfg.beta1, t));
    let bc2 = T::lit(1.0 - Float::powi(cfg.beta2, t));
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let eps = T::lit(cfg.eps);
    let rate = T::lit(lr);
    let decay = T::lit(1.0 - lr * cfg.weight_decay);
    for (p, (m, v)) in params
        .iter_mut()
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let grad = p.grad.data();
        let values = p.value.data_mut();
        for (((x, &g), mi), vi) in values
            .iter_mut()
            .zip(grad)
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + one_b1 * g;
            *vi = b2 * *vi + one_b2 * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x = *x * decay - rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
