//! Adam with bias correction, one moment pair per parameter tensor.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }
}

/// First/second moment estimates for one parameter set. Moments persist
/// across TBPTT groups and epochs; they are never reset mid-run.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamSet<S>) -> Self {
        let m = params.iter().map(|p| vec![S::ZERO; p.value.numel()]).collect();
        let v = params.iter().map(|p| vec![S::ZERO; p.value.numel()]).collect();
        AdamState { m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Textbook form with explicit bias-corrected moments:
    /// `θ -= lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut ParamSet<S>, config: &AdamConfig) {
        self.t += 1;
        let beta1 = S::from_f64(config.beta1);
        let beta2 = S::from_f64(config.beta2);
        let one_minus_beta1 = S::from_f64(1.0 - config.beta1);
        let one_minus_beta2 = S::from_f64(1.0 - config.beta2);
        let eps = S::from_f64(config.epsilon);
        let lr = S::from_f64(config.learning_rate);
        let inv_bc1 = S::from_f64(1.0 / (1.0 - libm::pow(config.beta1, self.t as f64)));
        let inv_bc2 = S::from_f64(1.0 / (1.0 - libm::pow(config.beta2, self.t as f64)));

        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let values = p.value.data_mut();
            for j in 0..values.len() {
                let g = p.grad[j];
                m[j] = beta1 * m[j] + one_minus_beta1 * g;
                v[j] = beta2 * v[j] + one_minus_beta2 * g * g;
                let m_hat = m[j] * inv_bc1;
                let v_hat = v[j] * inv_bc2;
                values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                p.grad[j] = S::ZERO;
            }
        }
    }
}
