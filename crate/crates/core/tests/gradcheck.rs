//! Analytic gradients vs central finite differences, layer by layer and for
//! the assembled network, at 64-bit precision.

mod common;

use common::{central_diff, rel_err, FD_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use wf_core::nn::network::NetworkConfig;
use wf_core::nn::ops::{cross_entropy, softmax, ConvLayer, Dense};

fn random_vec(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    for &(in_ch, out_ch, k, d, len) in &[
        (1usize, 1usize, 3usize, 1usize, 8usize),
        (2, 3, 3, 2, 12),
        (3, 2, 4, 3, 16),
        (4, 4, 3, 8, 32),
        (2, 2, 1, 1, 5),
    ] {
        let layer = ConvLayer::<f64> {
            weights: random_vec(&mut rng, out_ch * in_ch * k),
            bias: random_vec(&mut rng, out_ch),
            in_channels: in_ch,
            out_channels: out_ch,
            kernel: k,
            dilation: d,
        };
        let x = random_vec(&mut rng, in_ch * len);
        let target = random_vec(&mut rng, out_ch * len);
        // scalar loss: 0.5 * ||y - target||^2, so upstream = y - target
        let y = layer.forward(&x, len).unwrap();
        let upstream: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
        let (gw, gb, gx) = layer.backward(&x, len, &upstream).unwrap();

        // check weights and bias
        let mut wb: Vec<f64> = layer.weights.clone();
        wb.extend_from_slice(&layer.bias);
        let n_w = layer.weights.len();
        let mut loss_wb = |p: &[f64]| -> f64 {
            let l = ConvLayer {
                weights: p[..n_w].to_vec(),
                bias: p[n_w..].to_vec(),
                ..layer.clone()
            };
            let y = l.forward(&x, len).unwrap();
            0.5 * y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        for i in 0..wb.len() {
            let numeric = central_diff(&mut loss_wb, &mut wb, i, FD_STEP);
            let analytic = if i < n_w { gw[i] } else { gb[i - n_w] };
            assert!(
                rel_err(analytic, numeric) < 1e-4,
                "conv ({in_ch},{out_ch},{k},{d}) param {i}: analytic {analytic}, numeric {numeric}"
            );
        }
        // check the input gradient (the anticausal route)
        let mut xs = x.clone();
        let mut loss_x = |p: &[f64]| -> f64 {
            let y = layer.forward(p, len).unwrap();
            0.5 * y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        for i in 0..xs.len() {
            let numeric = central_diff(&mut loss_x, &mut xs, i, FD_STEP);
            assert!(
                rel_err(gx[i], numeric) < 1e-4,
                "conv input grad {i}: analytic {}, numeric {numeric}",
                gx[i]
            );
        }
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = ChaCha12Rng::seed_from_u64(202);
    for &(in_dim, out_dim) in &[(4usize, 3usize), (7, 7), (12, 2)] {
        let layer = Dense::<f64> {
            weights: random_vec(&mut rng, out_dim * in_dim),
            bias: random_vec(&mut rng, out_dim),
            in_dim,
            out_dim,
        };
        let x = random_vec(&mut rng, in_dim);
        let target = random_vec(&mut rng, out_dim);
        let y = layer.forward(&x).unwrap();
        let upstream: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
        let (gw, gb, gx) = layer.backward(&x, &upstream).unwrap();

        let mut wb = layer.weights.clone();
        wb.extend_from_slice(&layer.bias);
        let n_w = layer.weights.len();
        let mut loss_wb = |p: &[f64]| -> f64 {
            let l = Dense {
                weights: p[..n_w].to_vec(),
                bias: p[n_w..].to_vec(),
                ..layer.clone()
            };
            let y = l.forward(&x).unwrap();
            0.5 * y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        for i in 0..wb.len() {
            let numeric = central_diff(&mut loss_wb, &mut wb, i, FD_STEP);
            let analytic = if i < n_w { gw[i] } else { gb[i - n_w] };
            assert!(rel_err(analytic, numeric) < 1e-4, "dense param {i}");
        }
        let mut xs = x.clone();
        let mut loss_x = |p: &[f64]| -> f64 {
            let y = layer.forward(p).unwrap();
            0.5 * y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        for i in 0..xs.len() {
            let numeric = central_diff(&mut loss_x, &mut xs, i, FD_STEP);
            assert!(rel_err(gx[i], numeric) < 1e-4, "dense input grad {i}");
        }
    }
}

#[test]
fn softmax_cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    for trial in 0..5 {
        let c = 2 + trial;
        let mut logits = random_vec(&mut rng, c);
        let label = rng.random_range(0..c);
        let probs = softmax(&logits).unwrap();
        let (_, grad) = cross_entropy(&probs, label).unwrap();
        let mut loss = |p: &[f64]| -> f64 {
            let probs = softmax(p).unwrap();
            cross_entropy(&probs, label).unwrap().0
        };
        for i in 0..c {
            let numeric = central_diff(&mut loss, &mut logits, i, FD_STEP);
            assert!(
                rel_err(grad[i], numeric) < 1e-4,
                "logit {i}: analytic {}, numeric {numeric}",
                grad[i]
            );
        }
    }
}

#[test]
fn full_network_gradients_match_finite_differences() {
    // default architecture scaled to a short sequence and 4 classes,
    // dropout mask frozen across difference evaluations
    for seed in 0..5u64 {
        let cfg = NetworkConfig {
            seq_len: 32,
            num_classes: 4,
            ..NetworkConfig::default()
        };
        let max_err = common::network_gradcheck(cfg, seed, 64);
        assert!(
            max_err < 1e-4,
            "seed {seed}: max relative error {max_err}"
        );
    }
}

#[test]
fn zero_upstream_means_zero_gradients() {
    let layer = ConvLayer::<f64> {
        weights: vec![0.3, -0.7, 1.1],
        bias: vec![0.25],
        in_channels: 1,
        out_channels: 1,
        kernel: 3,
        dilation: 2,
    };
    let x = [0.5, -1.0, 2.0, 0.0, 1.5];
    let (gw, gb, gx) = layer.backward(&x, 5, &[0.0; 5]).unwrap();
    assert!(gw.iter().chain(gb.iter()).chain(gx.iter()).all(|&v| v == 0.0));
}
