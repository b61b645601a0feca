//! Adam with bias correction and per-group learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamMut, ParamRef};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate for each parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupLearningRates {
    pub isec: f64,
    pub classifier: f64,
}

impl GroupLearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            isec: lr,
            classifier: lr,
        }
    }

    pub fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Isec => self.isec,
            ParamGroup::Classifier => self.classifier,
        }
    }
}

/// First/second moment estimates for every tensor, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &[ParamRef<'_, F>]) -> Self {
        let zeros = || params.iter().map(|p| vec![F::zero(); p.values.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One Adam update:
/// `m ← β1 m + (1−β1) g`, `v ← β2 v + (1−β2) g²`,
/// `θ ← θ − lr · m̂ / (√v̂ + ε)` with `m̂ = m / (1−β1^t)`, `v̂ = v / (1−β2^t)`.
///
/// Gradients are checked before anything is modified; a non-finite entry
/// aborts the step and names the offending tensor.
pub fn adam_step<F: Scalar>(
    params: &mut [ParamMut<'_, F>],
    grads: &[ParamRef<'_, F>],
    state: &mut OptimizerState<F>,
    cfg: &AdamConfig,
    lrs: &GroupLearningRates,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.values.len() != g.values.len() {
            return Err(Error::Shape(format!("gradient for {} has wrong length", p.name)));
        }
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                group: g.group.to_string(),
                name: g.name.clone(),
            });
        }
    }
    state.t += 1;
    let b1 = F::lit(cfg.beta1);
    let b2 = F::lit(cfg.beta2);
    let eps = F::lit(cfg.eps);
    let bc1 = F::one() - F::lit(cfg.beta1.powi(state.t as i32));
    let bc2 = F::one() - F::lit(cfg.beta2.powi(state.t as i32));
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let lr = F::lit(lrs.for_group(p.group));
        for (((theta, &gi), mi), vi) in p
            .values
            .iter_mut()
            .zip(g.values)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (F::one() - b1) * gi;
            *vi = b2 * *vi + (F::one() - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut [ParamMut<'_, F>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.values.iter())
        .map(|&v| v.to_f64_value().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = F::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.values.iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}
