//! The fused sequence-and-statistics classifier.
//!
//! A stack of causal dilated convolutions (rectifier after each layer) reads
//! the fixed-length packet sequence; the flattened stack output is
//! concatenated with the normalized statistical features and passed through
//! a dense fusion layer (rectifier + dropout) and a dense output layer
//! producing per-class logits.

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ops::{dropout_mask, relu_backward, relu_inplace, ConvLayer, Dense};
use crate::seeding::stream_rng;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Convolution layers in the stack.
    pub conv_layers: usize,
    /// Filters (output channels) per convolution layer.
    pub filters: usize,
    /// Kernel width.
    pub kernel: usize,
    /// Dilation rates, cycled across the stack to avoid the gridding effect
    /// of repeating a single rate.
    pub dilation_schedule: Vec<usize>,
    /// When false every layer uses dilation 1 (the ablation switch).
    pub use_dilation: bool,
    /// Input sequence length.
    pub seq_len: usize,
    /// Statistical feature vector length.
    pub stat_dim: usize,
    /// Fusion hidden width.
    pub hidden_dim: usize,
    /// Output classes.
    pub num_classes: usize,
    /// Dropout rate after the fusion hidden layer.
    pub dropout_rate: f64,
}

impl NetworkConfig {
    pub fn new(num_classes: usize) -> Self {
        NetworkConfig {
            conv_layers: 12,
            filters: 4,
            kernel: 3,
            dilation_schedule: vec![1, 2, 4, 8],
            use_dilation: true,
            seq_len: crate::trace::DEFAULT_SEQ_LEN,
            stat_dim: crate::stats::STAT_DIM,
            hidden_dim: 512,
            num_classes,
            dropout_rate: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_layers == 0 {
            return Err(Error::InvalidConfig("conv_layers must be >= 1".into()));
        }
        if self.filters == 0 || self.kernel == 0 {
            return Err(Error::InvalidConfig("filters and kernel must be >= 1".into()));
        }
        if self.dilation_schedule.is_empty() || self.dilation_schedule.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(
                "dilation schedule must be non-empty with rates >= 1".into(),
            ));
        }
        if self.seq_len == 0 {
            return Err(Error::InvalidConfig("seq_len must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Dilation rate of layer `i`.
    pub fn dilation_for_layer(&self, i: usize) -> usize {
        if self.use_dilation {
            self.dilation_schedule[i % self.dilation_schedule.len()]
        } else {
            1
        }
    }

    /// Input positions that can influence one output position:
    /// `1 + (k-1) * Σ dilations`.
    pub fn receptive_field(&self) -> usize {
        let sum: usize = (0..self.conv_layers).map(|i| self.dilation_for_layer(i)).sum();
        1 + (self.kernel - 1) * sum
    }

    /// Flattened convolution-stack output size.
    pub fn flat_dim(&self) -> usize {
        self.filters * self.seq_len
    }

    /// Fusion layer input size (flattened stack plus statistics).
    pub fn fusion_in_dim(&self) -> usize {
        self.flat_dim() + self.stat_dim
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::new(100)
    }
}

/// Exact parameter counts. There are no frozen arrays, so the two numbers
/// coincide; both are reported for comparison tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
}

/// The layered parameter container.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub cfg: NetworkConfig,
    pub conv: Vec<ConvLayer<T>>,
    pub fusion: Dense<T>,
    pub output: Dense<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input to each convolution layer (`[channels × seq_len]`).
    pub conv_inputs: Vec<Vec<T>>,
    /// Pre-activation output of each convolution layer.
    pub conv_preacts: Vec<Vec<T>>,
    /// Flattened stack output concatenated with the statistics vector.
    pub fusion_input: Vec<T>,
    /// Fusion pre-activation.
    pub fusion_preact: Vec<T>,
    /// Fusion output after rectifier and dropout (input to the output layer).
    pub hidden: Vec<T>,
    /// Dropout mask applied to the hidden vector, if any.
    pub dropout_mask: Option<Vec<T>>,
}

impl<T> ForwardCache<T> {
    /// Post-rectifier activation of conv layer `i`: the cached input of the
    /// next layer, or (for the last layer) recomputed from the preact.
    pub fn conv_activation(&self, i: usize) -> Vec<T>
    where
        T: Float,
    {
        if i + 1 < self.conv_inputs.len() {
            self.conv_inputs[i + 1].clone()
        } else {
            crate::nn::ops::relu(&self.conv_preacts[i])
        }
    }
}

/// Per-array gradient buffers, in the network's canonical array order:
/// conv layer 0 weights, conv layer 0 bias, ..., fusion weights, fusion
/// bias, output weights, output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub arrays: Vec<Vec<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn zero(&mut self) {
        for a in &mut self.arrays {
            for v in a.iter_mut() {
                *v = T::zero();
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for a in &mut self.arrays {
            for v in a.iter_mut() {
                *v = *v * factor;
            }
        }
    }

    fn add_into(dst: &mut [T], src: &[T]) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *d + *s;
        }
    }
}

impl<T: Float> Network<T> {
    /// Build a network with deterministic seeded initialization.
    ///
    /// Convolution and fusion weights are uniform in ±sqrt(6/fan_in) and all
    /// biases zero. The output layer starts at zero so initial predictions
    /// are exactly uniform (initial cross-entropy equals ln C).
    pub fn build(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, 0x4E45_5457); // parameter-init stream
        let mut conv = Vec::with_capacity(cfg.conv_layers);
        for i in 0..cfg.conv_layers {
            let in_channels = if i == 0 { 1 } else { cfg.filters };
            let mut layer = ConvLayer::zeros(
                in_channels,
                cfg.filters,
                cfg.kernel,
                cfg.dilation_for_layer(i),
            );
            let bound = (6.0 / (in_channels * cfg.kernel) as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = T::from((rng.random::<f64>() * 2.0 - 1.0) * bound).unwrap();
            }
            conv.push(layer);
        }
        let mut fusion = Dense::zeros(cfg.fusion_in_dim(), cfg.hidden_dim);
        let bound = (6.0 / cfg.fusion_in_dim() as f64).sqrt();
        for w in fusion.weights.iter_mut() {
            *w = T::from((rng.random::<f64>() * 2.0 - 1.0) * bound).unwrap();
        }
        let output = Dense::zeros(cfg.hidden_dim, cfg.num_classes);
        Ok(Network {
            cfg,
            conv,
            fusion,
            output,
        })
    }

    /// Exact parameter count over all arrays.
    pub fn param_count(&self) -> ParamCount {
        let total: usize = self
            .param_arrays()
            .iter()
            .map(|a| a.len())
            .sum();
        ParamCount {
            total,
            trainable: total,
        }
    }

    /// Parameter arrays in canonical order.
    pub fn param_arrays(&self) -> Vec<&[T]> {
        let mut arrays = Vec::with_capacity(2 * self.conv.len() + 4);
        for layer in &self.conv {
            arrays.push(layer.weights.as_slice());
            arrays.push(layer.bias.as_slice());
        }
        arrays.push(self.fusion.weights.as_slice());
        arrays.push(self.fusion.bias.as_slice());
        arrays.push(self.output.weights.as_slice());
        arrays.push(self.output.bias.as_slice());
        arrays
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut [T]> {
        let mut arrays = Vec::with_capacity(2 * self.conv.len() + 4);
        for layer in &mut self.conv {
            arrays.push(layer.weights.as_mut_slice());
            arrays.push(layer.bias.as_mut_slice());
        }
        arrays.push(self.fusion.weights.as_mut_slice());
        arrays.push(self.fusion.bias.as_mut_slice());
        arrays.push(self.output.weights.as_mut_slice());
        arrays.push(self.output.bias.as_mut_slice());
        arrays
    }

    /// All parameters flattened in canonical order.
    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count().total);
        for a in self.param_arrays() {
            out.extend_from_slice(a);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count().total {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.param_count().total),
                got: format!("{}", flat.len()),
            });
        }
        let mut off = 0;
        for a in self.param_arrays_mut() {
            a.copy_from_slice(&flat[off..off + a.len()]);
            off += a.len();
        }
        Ok(())
    }

    /// Zeroed gradient buffers matching the parameter arrays.
    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            arrays: self
                .param_arrays()
                .iter()
                .map(|a| vec![T::zero(); a.len()])
                .collect(),
        }
    }

    fn check_io(&self, sequence: &[T], stats: &[T]) -> Result<()> {
        if sequence.len() != self.cfg.seq_len {
            return Err(Error::ShapeMismatch {
                expected: format!("sequence of length {}", self.cfg.seq_len),
                got: format!("{}", sequence.len()),
            });
        }
        if stats.len() != self.cfg.stat_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} statistical features", self.cfg.stat_dim),
                got: format!("{}", stats.len()),
            });
        }
        Ok(())
    }

    /// Forward pass with an explicit dropout mask (`None` = eval behaviour),
    /// returning the logits and the cache for [`Network::backward`].
    pub fn forward_with_mask(
        &self,
        sequence: &[T],
        stats: &[T],
        mask: Option<&[T]>,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_io(sequence, stats)?;
        if let Some(m) = mask {
            if m.len() != self.cfg.hidden_dim {
                return Err(Error::ShapeMismatch {
                    expected: format!("mask of length {}", self.cfg.hidden_dim),
                    got: format!("{}", m.len()),
                });
            }
        }
        let len = self.cfg.seq_len;
        let mut conv_inputs = Vec::with_capacity(self.conv.len());
        let mut conv_preacts = Vec::with_capacity(self.conv.len());
        let mut current = sequence.to_vec();
        for layer in &self.conv {
            let preact = layer.forward(&current, len)?;
            conv_inputs.push(current);
            let mut act = preact.clone();
            relu_inplace(&mut act);
            conv_preacts.push(preact);
            current = act;
        }

        let mut fusion_input = current;
        fusion_input.extend_from_slice(stats);

        let fusion_preact = self.fusion.forward(&fusion_input)?;
        let mut hidden = fusion_preact.clone();
        relu_inplace(&mut hidden);
        if let Some(m) = mask {
            for (h, &mv) in hidden.iter_mut().zip(m) {
                *h = *h * mv;
            }
        }
        let logits = self.output.forward(&hidden)?;
        Ok((
            logits,
            ForwardCache {
                conv_inputs,
                conv_preacts,
                fusion_input,
                fusion_preact,
                hidden,
                dropout_mask: mask.map(|m| m.to_vec()),
            },
        ))
    }

    /// Deterministic eval-mode forward pass.
    pub fn forward_eval(&self, sequence: &[T], stats: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_with_mask(sequence, stats, None)?.0)
    }

    /// Training-mode forward pass: samples a dropout mask from `rng`.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        sequence: &[T],
        stats: &[T],
        rng: &mut R,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        if self.cfg.dropout_rate > 0.0 {
            let mask = dropout_mask::<T, R>(self.cfg.hidden_dim, self.cfg.dropout_rate, rng);
            self.forward_with_mask(sequence, stats, Some(&mask))
        } else {
            self.forward_with_mask(sequence, stats, None)
        }
    }

    /// Accumulate the gradients of one sample into `grads`, given its forward
    /// cache and the loss gradient w.r.t. the logits.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        if grads.arrays.len() != 2 * self.conv.len() + 4 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} gradient arrays", 2 * self.conv.len() + 4),
                got: format!("{}", grads.arrays.len()),
            });
        }
        let len = self.cfg.seq_len;
        let n_conv = self.conv.len();

        let (gw_out, gb_out, mut grad_hidden) = self.output.backward(&cache.hidden, grad_logits)?;
        Gradients::add_into(&mut grads.arrays[2 * n_conv + 2], &gw_out);
        Gradients::add_into(&mut grads.arrays[2 * n_conv + 3], &gb_out);

        if let Some(mask) = &cache.dropout_mask {
            for (g, &m) in grad_hidden.iter_mut().zip(mask) {
                *g = *g * m;
            }
        }
        relu_backward(&mut grad_hidden, &cache.fusion_preact);

        let (gw_f, gb_f, grad_fusion_in) =
            self.fusion.backward(&cache.fusion_input, &grad_hidden)?;
        Gradients::add_into(&mut grads.arrays[2 * n_conv], &gw_f);
        Gradients::add_into(&mut grads.arrays[2 * n_conv + 1], &gb_f);

        let mut grad_seq = grad_fusion_in[..self.cfg.flat_dim()].to_vec();
        for (i, layer) in self.conv.iter().enumerate().rev() {
            relu_backward(&mut grad_seq, &cache.conv_preacts[i]);
            let (gw, gb, gx) = layer.backward(&cache.conv_inputs[i], len, &grad_seq)?;
            Gradients::add_into(&mut grads.arrays[2 * i], &gw);
            Gradients::add_into(&mut grads.arrays[2 * i + 1], &gb);
            grad_seq = gx;
        }
        Ok(())
    }
}
