//! Adam optimizer with bias-corrected moment estimates.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::nn::network::{Gradients, Network};

/// Optimizer hyperparameters. Defaults: learning rate 0.001, β1 0.9,
/// β2 0.999, ε 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamParams {
            learning_rate,
            ..AdamParams::default()
        }
    }
}

/// Per-parameter first and second moment estimates plus the step counter,
/// shaped like the network's parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub hyper: AdamParams,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(net: &Network<T>, hyper: AdamParams) -> Self {
        let shapes: Vec<usize> = net.param_arrays().iter().map(|a| a.len()).collect();
        AdamState {
            hyper,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    /// Apply one update with the accumulated gradients.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        let arrays = net.param_arrays_mut();
        if grads.arrays.len() != arrays.len() || self.m.len() != arrays.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameter arrays", arrays.len()),
                got: format!("{} gradient arrays", grads.arrays.len()),
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.hyper.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.hyper.beta2.powi(self.t as i32);
        for ((params, grad), (m, v)) in arrays
            .into_iter()
            .zip(&grads.arrays)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if grad.len() != params.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} gradients", params.len()),
                    got: format!("{}", grad.len()),
                });
            }
            adam_update(params, grad, m, v, c1, c2, &self.hyper);
        }
        Ok(())
    }
}

/// The element-wise Adam update for one parameter slice.
///
/// `m ← β1 m + (1-β1) g`, `v ← β2 v + (1-β2) g²`, then
/// `p ← p − lr · (m / c1) / (sqrt(v / c2) + ε)` with the caller-supplied
/// bias-correction factors `c1 = 1-β1^t`, `c2 = 1-β2^t`.
pub fn adam_update<T: Float>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    c1: f64,
    c2: f64,
    hyper: &AdamParams,
) {
    let beta1 = T::from(hyper.beta1).unwrap();
    let beta2 = T::from(hyper.beta2).unwrap();
    let one_minus_beta1 = T::one() - beta1;
    let one_minus_beta2 = T::one() - beta2;
    let lr = T::from(hyper.learning_rate).unwrap();
    let eps = T::from(hyper.epsilon).unwrap();
    let inv_c1 = T::from(1.0 / c1).unwrap();
    let inv_c2 = T::from(1.0 / c2).unwrap();
    for ((p, &g), (mi, vi)) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut().zip(v.iter_mut()))
    {
        *mi = beta1 * *mi + one_minus_beta1 * g;
        *vi = beta2 * *vi + one_minus_beta2 * g * g;
        let m_hat = *mi * inv_c1;
        let v_hat = *vi * inv_c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
}
