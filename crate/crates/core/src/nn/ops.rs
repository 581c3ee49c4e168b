//! Differentiable primitives: causal dilated 1-D convolution, dense layers,
//! rectifier, dropout, softmax and categorical cross-entropy.
//!
//! Everything is generic over the float width: training runs at `f32`,
//! gradient-checking suites at `f64`. All backward passes are exact analytic
//! gradients of the forward passes.

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

/// Forward/eval switch for stochastic layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One causal dilated convolution layer.
///
/// Output `y[o][t] = bias[o] + Σ_c Σ_i w[o][c][i] · x[c][t − (k−1−i)·d]`,
/// with out-of-range input indices reading as zero (left padding only), so
/// `y[·][t]` never depends on an input later than `t` and the output length
/// equals the input length.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    /// `[out_channels × in_channels × kernel]`, kernel index k−1 is the
    /// current-time tap.
    pub weights: Vec<T>,
    /// `[out_channels]`.
    pub bias: Vec<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl<T: Float> ConvLayer<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        ConvLayer {
            weights: vec![T::zero(); out_channels * in_channels * kernel],
            bias: vec![T::zero(); out_channels],
            in_channels,
            out_channels,
            kernel,
            dilation,
        }
    }

    #[inline]
    fn w(&self, o: usize, c: usize, i: usize) -> T {
        self.weights[(o * self.in_channels + c) * self.kernel + i]
    }

    fn check_input(&self, x: &[T], len: usize) -> Result<()> {
        if self.dilation == 0 || self.kernel == 0 {
            return Err(Error::InvalidConfig(
                "kernel and dilation must be >= 1".into(),
            ));
        }
        if x.len() != self.in_channels * len {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {len} input", self.in_channels),
                got: format!("{} values", x.len()),
            });
        }
        Ok(())
    }

    /// Causal convolution of an `[in_channels × len]` input.
    pub fn forward(&self, x: &[T], len: usize) -> Result<Vec<T>> {
        self.check_input(x, len)?;
        let mut y = vec![T::zero(); self.out_channels * len];
        for o in 0..self.out_channels {
            let y_row = &mut y[o * len..(o + 1) * len];
            let b = self.bias[o];
            for v in y_row.iter_mut() {
                *v = b;
            }
            for c in 0..self.in_channels {
                let x_row = &x[c * len..(c + 1) * len];
                for i in 0..self.kernel {
                    let off = (self.kernel - 1 - i) * self.dilation;
                    if off >= len {
                        continue;
                    }
                    let w = self.w(o, c, i);
                    for (yv, xv) in y_row[off..].iter_mut().zip(&x_row[..len - off]) {
                        *yv = *yv + w * *xv;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Gradients of a scalar loss w.r.t. weights, bias and input, given the
    /// upstream gradient and the cached forward input.
    ///
    /// The input gradient is the anticausal (transposed) convolution of the
    /// upstream signal.
    pub fn backward(&self, x: &[T], len: usize, upstream: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        self.check_input(x, len)?;
        if upstream.len() != self.out_channels * len {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {len} upstream", self.out_channels),
                got: format!("{} values", upstream.len()),
            });
        }
        let mut grad_w = vec![T::zero(); self.weights.len()];
        let mut grad_b = vec![T::zero(); self.out_channels];
        let mut grad_x = vec![T::zero(); x.len()];
        for o in 0..self.out_channels {
            let up_row = &upstream[o * len..(o + 1) * len];
            grad_b[o] = up_row.iter().fold(T::zero(), |acc, &u| acc + u);
            for c in 0..self.in_channels {
                let x_row = &x[c * len..(c + 1) * len];
                let gx_row = &mut grad_x[c * len..(c + 1) * len];
                for i in 0..self.kernel {
                    let off = (self.kernel - 1 - i) * self.dilation;
                    if off >= len {
                        continue;
                    }
                    let mut acc = T::zero();
                    for (u, xv) in up_row[off..].iter().zip(&x_row[..len - off]) {
                        acc = acc + *u * *xv;
                    }
                    grad_w[(o * self.in_channels + c) * self.kernel + i] = acc;
                    let w = self.w(o, c, i);
                    for (g, u) in gx_row[..len - off].iter_mut().zip(&up_row[off..]) {
                        *g = *g + w * *u;
                    }
                }
            }
        }
        Ok((grad_w, grad_b, grad_x))
    }
}

/// Fully-connected layer `y = Wx + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `[out_dim × in_dim]`, row-major.
    pub weights: Vec<T>,
    /// `[out_dim]`.
    pub bias: Vec<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Float> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weights: vec![T::zero(); out_dim * in_dim],
            bias: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} inputs", self.in_dim),
                got: format!("{}", x.len()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut y = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, xv) in row.iter().zip(x) {
                acc = acc + *w * *xv;
            }
            y.push(acc);
        }
        Ok(y)
    }

    /// Gradients w.r.t. weights, bias and input.
    pub fn backward(&self, x: &[T], upstream: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        self.check_input(x)?;
        if upstream.len() != self.out_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} upstream", self.out_dim),
                got: format!("{}", upstream.len()),
            });
        }
        let mut grad_w = vec![T::zero(); self.weights.len()];
        let mut grad_x = vec![T::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let u = upstream[o];
            let gw_row = &mut grad_w[o * self.in_dim..(o + 1) * self.in_dim];
            for (g, xv) in gw_row.iter_mut().zip(x) {
                *g = u * *xv;
            }
            let w_row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for (g, w) in grad_x.iter_mut().zip(w_row) {
                *g = *g + u * *w;
            }
        }
        Ok((grad_w, upstream.to_vec(), grad_x))
    }
}

/// Rectifier `max(0, x)`, with subgradient 0 at 0.
pub fn relu<T: Float>(x: &[T]) -> Vec<T> {
    x.iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect()
}

pub fn relu_inplace<T: Float>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Multiply `grad` by the rectifier derivative at the cached pre-activation.
pub fn relu_backward<T: Float>(grad: &mut [T], preact: &[T]) {
    for (g, &z) in grad.iter_mut().zip(preact) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Sample an inverted-dropout mask: entries are 0 with probability `rate`,
/// otherwise `1/(1-rate)`.
pub fn dropout_mask<T: Float, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep_scale = T::from(1.0 / (1.0 - rate)).unwrap();
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep_scale
            }
        })
        .collect()
}

/// Inverted dropout. Training mode zeroes units with probability `rate` and
/// rescales survivors; eval mode is the identity.
pub fn dropout<T: Float, R: Rng + ?Sized>(x: &[T], rate: f64, mode: Mode, rng: &mut R) -> Vec<T> {
    if mode == Mode::Eval || rate == 0.0 {
        return x.to_vec();
    }
    let mask = dropout_mask::<T, R>(x.len(), rate, rng);
    x.iter().zip(&mask).map(|(&v, &m)| v * m).collect()
}

/// Numerically stable softmax (max-shifted exponentials).
pub fn softmax<T: Float>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: "at least 1 logit".into(),
            got: "0".into(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let max = logits.iter().fold(logits[0], |a, &b| if b > a { b } else { a });
    let mut probs: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum = probs.iter().fold(T::zero(), |a, &b| a + b);
    for p in probs.iter_mut() {
        *p = *p / sum;
    }
    Ok(probs)
}

/// Probability floor inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Categorical cross-entropy of softmax probabilities against an integer
/// label. Returns the loss and the combined softmax+cross-entropy gradient
/// w.r.t. the logits, `probs - one_hot(label)`.
pub fn cross_entropy<T: Float>(probs: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    let floor = T::from(PROB_FLOOR).unwrap();
    let p = if probs[label] > floor { probs[label] } else { floor };
    let loss = -p.ln();
    let mut grad = probs.to_vec();
    grad[label] = grad[label] - T::one();
    Ok((loss, grad))
}
