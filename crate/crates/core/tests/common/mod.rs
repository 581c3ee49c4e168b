//! Shared finite-difference oracle for gradient checks.
//!
//! The oracle is independent of the backward-pass implementation: it only
//! calls forward passes through a loss closure and compares central
//! differences against whatever analytic gradient the caller supplies.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use wf_core::nn::network::{Network, NetworkConfig};
use wf_core::nn::ops::{cross_entropy, dropout_mask, softmax};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Central finite difference of `loss` w.r.t. coordinate `i` of `params`.
pub fn central_diff(
    loss: &mut dyn FnMut(&[f64]) -> f64,
    params: &mut [f64],
    i: usize,
    h: f64,
) -> f64 {
    let orig = params[i];
    params[i] = orig + h;
    let plus = loss(params);
    params[i] = orig - h;
    let minus = loss(params);
    params[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Build a 64-bit network plus a random labelled input and a frozen dropout
/// mask, and return the max relative error between the analytic gradient and
/// central differences over a coordinate sample.
///
/// Every convolution parameter is always checked; `sampled_per_array` extra
/// coordinates are drawn from each dense array.
pub fn network_gradcheck(cfg: NetworkConfig, seed: u64, sampled_per_array: usize) -> f64 {
    let net = Network::<f64>::build(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5EED);
    let sequence: Vec<f64> = (0..cfg.seq_len)
        .map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 })
        .collect();
    let stats: Vec<f64> = (0..cfg.stat_dim)
        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
        .collect();
    let label = rng.random_range(0..cfg.num_classes);
    let mask: Option<Vec<f64>> = if cfg.dropout_rate > 0.0 {
        Some(dropout_mask(cfg.hidden_dim, cfg.dropout_rate, &mut rng))
    } else {
        None
    };

    // analytic gradient, flattened in canonical parameter order
    let (logits, cache) = net
        .forward_with_mask(&sequence, &stats, mask.as_deref())
        .unwrap();
    let probs = softmax(&logits).unwrap();
    let (_, grad_logits) = cross_entropy(&probs, label).unwrap();
    let mut grads = net.zero_grads();
    net.backward(&cache, &grad_logits, &mut grads).unwrap();
    let analytic: Vec<f64> = grads.arrays.iter().flatten().copied().collect();

    // loss as a pure function of the flat parameter vector
    let mut scratch = net.clone();
    let mut loss = move |flat: &[f64]| -> f64 {
        scratch.set_params_flat(flat).unwrap();
        let (logits, _) = scratch
            .forward_with_mask(&sequence, &stats, mask.as_deref())
            .unwrap();
        let probs = softmax(&logits).unwrap();
        cross_entropy(&probs, label).unwrap().0
    };

    // coordinate sample: all conv parameters, a draw from each dense array
    let array_lens: Vec<usize> = net.param_arrays().iter().map(|a| a.len()).collect();
    let conv_arrays = 2 * cfg.conv_layers;
    let mut coords: Vec<usize> = Vec::new();
    let mut offset = 0usize;
    for (idx, len) in array_lens.iter().enumerate() {
        if idx < conv_arrays {
            coords.extend(offset..offset + len);
        } else {
            for _ in 0..sampled_per_array.min(*len) {
                coords.push(offset + rng.random_range(0..*len));
            }
        }
        offset += len;
    }

    let mut params = net.params_flat();
    let mut max_err = 0.0f64;
    for &i in &coords {
        let numeric = central_diff(&mut loss, &mut params, i, FD_STEP);
        let err = rel_err(analytic[i], numeric);
        if err > max_err {
            max_err = err;
        }
    }
    max_err
}
