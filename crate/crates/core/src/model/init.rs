//! Weight initialization: uniform fan-in scaling for convolutions and
//! dense layers, standard uniform for LSTM weights with the forget-gate
//! bias lifted to +1, PReLU slopes at 0.25. The seed is part of the run
//! manifest, so initializations replay exactly.

use crate::autodiff::Tensor;
use crate::rng::Rng;
use crate::scalar::Scalar;

pub fn uniform<S: Scalar>(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor<S> {
    Tensor::from_fn(shape, |_| S::from_f64(rng.range(-bound, bound)))
}

pub fn fan_in_bound(fan_in: usize) -> f64 {
    libm::sqrt(1.0 / fan_in as f64)
}

pub fn conv_weight<S: Scalar>(rng: &mut Rng, cout: usize, cin: usize, k: usize) -> Tensor<S> {
    uniform(rng, &[cout, cin, k], fan_in_bound(cin * k))
}

pub fn conv_bias<S: Scalar>(rng: &mut Rng, cout: usize, cin: usize, k: usize) -> Tensor<S> {
    uniform(rng, &[cout], fan_in_bound(cin * k))
}

pub fn dense_weight<S: Scalar>(rng: &mut Rng, out: usize, input: usize) -> Tensor<S> {
    uniform(rng, &[out, input], fan_in_bound(input))
}

pub fn dense_bias<S: Scalar>(rng: &mut Rng, out: usize, input: usize) -> Tensor<S> {
    uniform(rng, &[out], fan_in_bound(input))
}

pub fn prelu_slope<S: Scalar>(channels: usize) -> Tensor<S> {
    Tensor::full(&[channels], S::from_f64(0.25))
}

/// LSTM weights and bias, gate order (i, f, g, o), forget-gate bias +1.
pub fn lstm<S: Scalar>(rng: &mut Rng, hidden: usize, input: usize) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let bound = fan_in_bound(hidden);
    let w_ih = uniform(rng, &[4 * hidden, input], bound);
    let w_hh = uniform(rng, &[4 * hidden, hidden], bound);
    let mut bias = uniform::<S>(rng, &[4 * hidden], bound);
    for j in hidden..2 * hidden {
        bias.data_mut()[j] += S::ONE;
    }
    (w_ih, w_hh, bias)
}
