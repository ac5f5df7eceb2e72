//! Adam optimizer and global-norm gradient clipping.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates, aligned with the [`ParamSet`] order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(set: &ParamSet<T>) -> Self {
        Self {
            m: set.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: set.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction, consuming `set.grad`.
///
/// A non-finite gradient aborts the step before touching any parameter and
/// reports which parameter was bad.
pub fn adam_step<T: Real>(
    set: &mut ParamSet<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for p in set.iter() {
        if p.grad.data().iter().any(|g| !g.is_finite()) {
            return Err(CoreError::NonFinite {
                op: "adam_step",
                detail: format!("gradient of {}", p.name),
            });
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let bc1 = T::from_f64(1.0 - cfg.beta1.powf(t));
    let bc2 = T::from_f64(1.0 - cfg.beta2.powf(t));
    for (i, p) in set.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let grads = p.grad.data();
        for ((mi, vi), &g) in m.iter_mut().zip(v.iter_mut()).zip(grads) {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
        }
        let values = p.value.data_mut();
        for ((&mi, &vi), x) in m.iter().zip(v.iter()).zip(values.iter_mut()) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *x = *x - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm when clipping fired.
pub fn clip_global_norm<T: Real>(set: &mut ParamSet<T>, max_norm: f64) -> Option<f64> {
    let mut sq = 0.0f64;
    for p in set.iter() {
        for g in p.grad.data() {
            let g = g.as_f64();
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return None;
    }
    let scale = T::from_f64(max_norm / norm);
    for p in set.iter_mut() {
        for g in p.grad.data_mut() {
            *g = *g * scale;
        }
    }
    Some(norm)
}
