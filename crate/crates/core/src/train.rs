//! Training loop, early stopping, metrics, and the evaluation protocols
//! (closed-world accuracy, dilation ablation, encoding comparison).

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::ingest::Split;
use crate::nn::adam::{AdamParams, AdamState};
use crate::nn::network::{Network, NetworkConfig};
use crate::nn::ops::{cross_entropy, softmax};
use crate::seeding::stream_rng;
use crate::stats::{extract_stats, fit_normalizer, normalize, Normalizer, StatFeatures};
use crate::trace::{encode_direction, encode_raw, EncodedSample, Trace};

/// Which sequence encoding feeds the convolution stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingMode {
    /// Signs only: ±1 per packet.
    Direction,
    /// Signed sizes scaled into `[-1, 1]`.
    Raw,
}

impl EncodingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncodingMode::Direction => "direction",
            EncodingMode::Raw => "raw",
        }
    }
}

impl std::str::FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direction" => Ok(EncodingMode::Direction),
            "raw" => Ok(EncodingMode::Raw),
            other => Err(Error::InvalidConfig(format!("unknown encoding '{other}'"))),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience on validation accuracy, in epochs. Ignored
    /// when the validation split is empty.
    pub patience: usize,
    pub learning_rate: f64,
    /// Drives shuffling and dropout; also the default network-init seed.
    pub seed: u64,
    pub encoding: EncodingMode,
    pub raw_scale: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            learning_rate: 0.001,
            seed: 0,
            encoding: EncodingMode::Direction,
            raw_scale: crate::trace::DEFAULT_RAW_SCALE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.raw_scale == 0 {
            return Err(Error::InvalidConfig("raw_scale must be >= 1".into()));
        }
        Ok(())
    }
}

/// Encoded splits ready for training, with the fitted normalizer and the
/// site-id ↦ class-index mapping (`classes[index] = site id`).
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub train: Vec<EncodedSample>,
    pub val: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
    pub classes: Vec<u32>,
    pub normalizer: Normalizer,
}

impl PreparedDataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Map a site id to its class index.
pub fn class_index(classes: &[u32], site: u32) -> Result<usize> {
    classes
        .binary_search(&site)
        .map_err(|_| Error::InvalidConfig(format!("site {site} not in the training classes")))
}

/// Encode a split dataset. Statistical features are computed on the full
/// traces and normalized with parameters fitted on the training split only;
/// validation and test reuse those parameters (no leakage). Unassigned
/// traces are skipped.
pub fn prepare_dataset(
    dataset: &[(Trace, Split)],
    encoding: EncodingMode,
    seq_len: usize,
    raw_scale: u32,
) -> Result<PreparedDataset> {
    let mut classes: Vec<u32> = dataset
        .iter()
        .filter(|(_, s)| *s == Split::Train)
        .map(|(t, _)| t.site)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }

    let train_features: Vec<StatFeatures> = dataset
        .iter()
        .filter(|(_, s)| *s == Split::Train)
        .map(|(t, _)| extract_stats(t))
        .collect::<Result<_>>()?;
    let normalizer = fit_normalizer(&train_features)?;

    let mut prepared = PreparedDataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        classes,
        normalizer,
    };
    for (trace, split) in dataset {
        if *split == Split::Unassigned {
            continue;
        }
        class_index(&prepared.classes, trace.site)?;
        let sequence = match encoding {
            EncodingMode::Direction => encode_direction(trace, seq_len)?,
            EncodingMode::Raw => encode_raw(trace, seq_len, raw_scale)?,
        };
        let stats: Vec<f32> = normalize(&extract_stats(trace)?, &prepared.normalizer)
            .iter()
            .map(|&v| v as f32)
            .collect();
        let sample = EncodedSample {
            sequence,
            stats,
            label: trace.site,
        };
        match split {
            Split::Train => prepared.train.push(sample),
            Split::Val => prepared.val.push(sample),
            Split::Test => prepared.test.push(sample),
            Split::Unassigned => unreachable!(),
        }
    }
    Ok(prepared)
}

/// Metrics of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_acc: f64,
    /// NaN when there is no validation split.
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Per-epoch records and the restored best epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the parameters the network was left with.
    pub best_epoch: usize,
}

/// Final evaluation metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// `confusion[true_class][predicted_class]`.
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode mean cross-entropy loss and accuracy over a sample set.
pub fn mean_loss_accuracy(
    net: &Network<f32>,
    samples: &[EncodedSample],
    classes: &[u32],
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for s in samples {
        let label = class_index(classes, s.label)?;
        let logits = net.forward_eval(&s.sequence, &s.stats)?;
        let probs = softmax(&logits)?;
        let (loss, _) = cross_entropy(&probs, label)?;
        loss_sum += f64::from(loss);
        if argmax(&logits) == label {
            correct += 1;
        }
    }
    Ok((
        loss_sum / samples.len() as f64,
        correct as f64 / samples.len() as f64,
    ))
}

fn check_samples(net: &Network<f32>, samples: &[EncodedSample], classes: &[u32]) -> Result<()> {
    for s in samples {
        if s.sequence.len() != net.cfg.seq_len {
            return Err(Error::ShapeMismatch {
                expected: format!("sequence length {}", net.cfg.seq_len),
                got: format!("{}", s.sequence.len()),
            });
        }
        if s.stats.len() != net.cfg.stat_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} stat features", net.cfg.stat_dim),
                got: format!("{}", s.stats.len()),
            });
        }
        class_index(classes, s.label)?;
    }
    Ok(())
}

/// Minibatch training with Adam and early stopping.
///
/// One epoch is a seeded shuffle pass over the training set in batches of
/// `cfg.batch_size`. When a validation split is present, the epoch with the
/// highest validation accuracy is tracked and its parameter snapshot is
/// restored at the end, stopping early once `cfg.patience` epochs pass
/// without improvement. With no validation split, training runs the full
/// `cfg.max_epochs` and keeps the final parameters. Deterministic given
/// `(net, data, cfg)`.
pub fn train(
    net: &mut Network<f32>,
    train_set: &[EncodedSample],
    val_set: &[EncodedSample],
    classes: &[u32],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if classes.len() != net.cfg.num_classes {
        return Err(Error::ShapeMismatch {
            expected: format!("{} classes", net.cfg.num_classes),
            got: format!("{}", classes.len()),
        });
    }
    check_samples(net, train_set, classes)?;
    check_samples(net, val_set, classes)?;

    let mut shuffle_rng = stream_rng(cfg.seed, 0);
    let mut dropout_rng = stream_rng(cfg.seed, 1);
    let mut adam = AdamState::new(net, AdamParams::with_learning_rate(cfg.learning_rate));
    let mut grads = net.zero_grads();

    let use_early_stop = !val_set.is_empty();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<Vec<f32>> = None;

    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            grads.zero();
            for &i in batch {
                let s = &train_set[i];
                let label = class_index(classes, s.label)?;
                let (logits, cache) = net.forward_train(&s.sequence, &s.stats, &mut dropout_rng)?;
                let probs = softmax(&logits)?;
                let (loss, grad_logits) = cross_entropy(&probs, label)?;
                loss_sum += f64::from(loss);
                if argmax(&logits) == label {
                    correct += 1;
                }
                net.backward(&cache, &grad_logits, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f32);
            adam.step(net, &grads)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = correct as f64 / train_set.len() as f64;
        let (val_loss, val_acc) = if use_early_stop {
            mean_loss_accuracy(net, val_set, classes)?
        } else {
            (f64::NAN, f64::NAN)
        };
        history.epochs.push(EpochRecord {
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });

        if use_early_stop {
            if val_acc > best_acc {
                best_acc = val_acc;
                best_epoch = epoch;
                best_params = Some(net.params_flat());
            } else if epoch - best_epoch >= cfg.patience {
                break;
            }
        } else {
            best_epoch = epoch;
        }
    }

    if let Some(params) = best_params {
        net.set_params_flat(&params)?;
    }
    history.best_epoch = best_epoch;
    Ok(history)
}

/// Argmax classification of a test split with a full confusion matrix.
pub fn evaluate(net: &Network<f32>, test_set: &[EncodedSample], classes: &[u32]) -> Result<Metrics> {
    if test_set.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if classes.len() != net.cfg.num_classes {
        return Err(Error::ShapeMismatch {
            expected: format!("{} classes", net.cfg.num_classes),
            got: format!("{}", classes.len()),
        });
    }
    let c = classes.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for s in test_set {
        let label = class_index(classes, s.label)?;
        let logits = net.forward_eval(&s.sequence, &s.stats)?;
        confusion[label][argmax(&logits)] += 1;
    }
    let total: usize = confusion.iter().map(|row| row.iter().sum::<usize>()).sum();
    let diag: usize = (0..c).map(|i| confusion[i][i]).sum();
    let mut precision = vec![0.0; c];
    let mut recall = vec![0.0; c];
    for i in 0..c {
        let col: usize = (0..c).map(|r| confusion[r][i]).sum();
        let row: usize = confusion[i].iter().sum();
        precision[i] = if col > 0 { confusion[i][i] as f64 / col as f64 } else { 0.0 };
        recall[i] = if row > 0 { confusion[i][i] as f64 / row as f64 } else { 0.0 };
    }
    Ok(Metrics {
        accuracy: diag as f64 / total as f64,
        confusion,
        precision,
        recall,
    })
}

/// Build a network from `net_cfg` (seeded with `train_cfg.seed`), train on
/// the prepared dataset, and evaluate on its test split.
pub fn train_once(
    prepared: &PreparedDataset,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<(Network<f32>, TrainHistory, Metrics)> {
    let mut cfg = net_cfg.clone();
    cfg.num_classes = prepared.num_classes();
    let mut net = Network::build(cfg, train_cfg.seed)?;
    let history = train(
        &mut net,
        &prepared.train,
        &prepared.val,
        &prepared.classes,
        train_cfg,
    )?;
    let metrics = evaluate(&net, &prepared.test, &prepared.classes)?;
    Ok((net, history, metrics))
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
}

/// Render a comparison table as CSV.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("variant,seed,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6}\n", r.variant, r.seed, r.accuracy));
    }
    out
}

/// The dilation ablation: {8, 12} convolution layers × {dilated, undilated},
/// trained under matched seeds and splits. Emits one row per variant per
/// seed.
pub fn run_ablation(
    dataset: &[(Trace, Split)],
    base_net: &NetworkConfig,
    base_train: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<ComparisonRow>> {
    let prepared = prepare_dataset(
        dataset,
        base_train.encoding,
        base_net.seq_len,
        base_train.raw_scale,
    )?;
    let mut rows = Vec::with_capacity(4 * seeds.len());
    for (layers, dilated) in [(8, true), (8, false), (12, true), (12, false)] {
        let variant = format!("conv{layers}_{}", if dilated { "dilated" } else { "undilated" });
        let net_cfg = NetworkConfig {
            conv_layers: layers,
            use_dilation: dilated,
            ..base_net.clone()
        };
        for &seed in seeds {
            let train_cfg = TrainConfig {
                seed,
                ..base_train.clone()
            };
            let (_, _, metrics) = train_once(&prepared, &net_cfg, &train_cfg)?;
            rows.push(ComparisonRow {
                variant: variant.clone(),
                seed,
                accuracy: metrics.accuracy,
            });
        }
    }
    Ok(rows)
}

/// Direction-mode vs raw-mode comparison under matched seeds. Emits one row
/// per encoding per seed.
pub fn run_encoding_comparison(
    dataset: &[(Trace, Split)],
    base_net: &NetworkConfig,
    base_train: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(2 * seeds.len());
    for encoding in [EncodingMode::Direction, EncodingMode::Raw] {
        let prepared = prepare_dataset(dataset, encoding, base_net.seq_len, base_train.raw_scale)?;
        for &seed in seeds {
            let train_cfg = TrainConfig {
                seed,
                encoding,
                ..base_train.clone()
            };
            let (_, _, metrics) = train_once(&prepared, base_net, &train_cfg)?;
            rows.push(ComparisonRow {
                variant: encoding.as_str().to_string(),
                seed,
                accuracy: metrics.accuracy,
            });
        }
    }
    Ok(rows)
}

/// Render a training history as CSV (`epoch` is 1-based).
pub fn export_history(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for (i, e) in history.epochs.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            i + 1,
            e.train_loss,
            e.train_acc,
            e.val_loss,
            e.val_acc
        ));
    }
    out
}

/// Render metrics as CSV: the accuracy row, then per-class precision/recall.
pub fn export_metrics(metrics: &Metrics, classes: &[u32]) -> String {
    let mut out = String::from("metric,site,value\n");
    out.push_str(&format!("accuracy,,{:.6}\n", metrics.accuracy));
    for (i, &site) in classes.iter().enumerate() {
        out.push_str(&format!("precision,{site},{:.6}\n", metrics.precision[i]));
    }
    for (i, &site) in classes.iter().enumerate() {
        out.push_str(&format!("recall,{site},{:.6}\n", metrics.recall[i]));
    }
    out
}

/// Render the confusion matrix as CSV with site-id headers (rows = true
/// site, columns = predicted site).
pub fn export_confusion(metrics: &Metrics, classes: &[u32]) -> String {
    let mut out = String::from("true_site");
    for site in classes {
        out.push_str(&format!(",{site}"));
    }
    out.push('\n');
    for (i, &site) in classes.iter().enumerate() {
        out.push_str(&format!("{site}"));
        for v in &metrics.confusion[i] {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Nearest-centroid classifier on the normalized statistical features.
///
/// Fits the normalizer and per-class centroids on `train`, classifies `test`
/// by Euclidean distance, and returns the accuracy. Serves as the
/// NN-independent separability oracle for synthetic benchmarks.
pub fn nearest_centroid_accuracy(
    train: &[(StatFeatures, u32)],
    test: &[(StatFeatures, u32)],
) -> Result<f64> {
    if train.len() < 2 || test.is_empty() {
        return Err(Error::TooFewSamples {
            need: 2,
            got: train.len().min(test.len()),
        });
    }
    let normalizer = fit_normalizer(&train.iter().map(|(f, _)| *f).collect::<Vec<_>>())?;
    let mut labels: Vec<u32> = train.iter().map(|(_, l)| *l).collect();
    labels.sort_unstable();
    labels.dedup();

    let dim = crate::stats::STAT_DIM;
    let mut centroids = vec![vec![0.0f64; dim]; labels.len()];
    let mut counts = vec![0usize; labels.len()];
    for (f, label) in train {
        let k = labels.binary_search(label).unwrap();
        for (c, v) in centroids[k].iter_mut().zip(normalize(f, &normalizer)) {
            *c += v;
        }
        counts[k] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        for v in c.iter_mut() {
            *v /= *n as f64;
        }
    }

    let mut correct = 0usize;
    for (f, label) in test {
        let z = normalize(f, &normalizer);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, c) in centroids.iter().enumerate() {
            let d: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        if labels[best] == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Layer, PacketRecord};

    fn mk_trace(site: u32, seed: u64, n: usize) -> Trace {
        // simple deterministic pseudo-traffic: site shifts the size pattern
        let packets = (0..n)
            .map(|i| {
                let phase = (i as u64).wrapping_mul(2654435761).wrapping_add(seed) % 7;
                let size = if phase < 2 + u64::from(site % 3) {
                    -(60 + (site as i64 * 37) % 500 + phase as i64)
                } else {
                    400 + (site as i64 * 211) % 900 + phase as i64
                };
                PacketRecord {
                    timestamp: i as f64 * (0.004 + site as f64 * 0.001),
                    size,
                }
            })
            .collect();
        Trace::new(site, Layer::Tcp, packets).unwrap()
    }

    fn tiny_dataset(sites: u32, per_site: usize) -> Vec<(Trace, Split)> {
        let mut out = Vec::new();
        for site in 0..sites {
            for i in 0..per_site {
                let split = match i % 5 {
                    0 => Split::Val,
                    1 => Split::Test,
                    _ => Split::Train,
                };
                out.push((mk_trace(site, i as u64, 24 + (i % 4)), split));
            }
        }
        out
    }

    fn tiny_net_cfg(classes: usize) -> NetworkConfig {
        NetworkConfig {
            conv_layers: 2,
            filters: 2,
            kernel: 3,
            dilation_schedule: vec![1, 2],
            use_dilation: true,
            seq_len: 20,
            stat_dim: crate::stats::STAT_DIM,
            hidden_dim: 16,
            num_classes: classes,
            dropout_rate: 0.1,
        }
    }

    fn tiny_train_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            max_epochs: 4,
            patience: 3,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn prepare_maps_labels_and_normalizes() {
        let ds = tiny_dataset(3, 10);
        let p = prepare_dataset(&ds, EncodingMode::Direction, 20, 1500).unwrap();
        assert_eq!(p.classes, vec![0, 1, 2]);
        assert_eq!(p.train.len(), 18);
        assert_eq!(p.val.len(), 6);
        assert_eq!(p.test.len(), 6);
        for s in &p.train {
            assert_eq!(s.sequence.len(), 20);
            assert_eq!(s.stats.len(), crate::stats::STAT_DIM);
        }
    }

    #[test]
    fn prepare_rejects_empty_train() {
        let ds: Vec<(Trace, Split)> = vec![(mk_trace(0, 0, 10), Split::Test)];
        assert!(prepare_dataset(&ds, EncodingMode::Direction, 10, 1500).is_err());
    }

    #[test]
    fn single_class_reaches_full_accuracy_after_one_epoch() {
        let mut ds = tiny_dataset(1, 10);
        ds.retain(|(_, s)| *s != Split::Val);
        let p = prepare_dataset(&ds, EncodingMode::Direction, 20, 1500).unwrap();
        let cfg = tiny_net_cfg(1);
        let mut net = Network::build(cfg, 1).unwrap();
        let tc = TrainConfig {
            max_epochs: 1,
            ..tiny_train_cfg(3)
        };
        let history = train(&mut net, &p.train, &[], &p.classes, &tc).unwrap();
        assert_eq!(history.epochs.len(), 1);
        assert_eq!(history.epochs[0].train_acc, 1.0);
        let m = evaluate(&net, &p.test, &p.classes).unwrap();
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn initial_loss_is_ln_c() {
        let ds = tiny_dataset(4, 10);
        let p = prepare_dataset(&ds, EncodingMode::Direction, 20, 1500).unwrap();
        let net = Network::build(tiny_net_cfg(4), 5).unwrap();
        let (loss, _) = mean_loss_accuracy(&net, &p.train, &p.classes).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 0.1, "initial loss {loss}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset(3, 10);
        let p = prepare_dataset(&ds, EncodingMode::Direction, 20, 1500).unwrap();
        let run = || {
            let mut net = Network::build(tiny_net_cfg(3), 9).unwrap();
            let h = train(&mut net, &p.train, &p.val, &p.classes, &tiny_train_cfg(9)).unwrap();
            (net.params_flat(), h)
        };
        let (params_a, hist_a) = run();
        let (params_b, hist_b) = run();
        assert_eq!(params_a, params_b);
        assert_eq!(hist_a, hist_b);
    }

    #[test]
    fn early_stop_restores_best_epoch_snapshot() {
        let ds = tiny_dataset(3, 15);
        let p = prepare_dataset(&ds, EncodingMode::Direction, 20, 1500).unwrap();
        let mut net = Network::build(tiny_net_cfg(3), 2).unwrap();
        let tc = TrainConfig {
            max_epochs: 6,
            patience: 2,
            ..tiny_train_cfg(2)
        };
        let history = train(&mut net, &p.train, &p.val, &p.classes, &tc).unwrap();

        // replay exactly best_epoch+1 epochs with no early stopping: the
        // final parameters must equal the snapshot train() restored
        let mut replay = Network::build(tiny_net_cfg(3), 2).unwrap();
        let tc2 = TrainConfig {
            max_epochs: history.best_epoch + 1,
            patience: usize::MAX,
            ..tiny_train_cfg(2)
        };
        train(&mut replay, &p.train, &p.val, &p.classes, &tc2).unwrap();
        let a: Vec<u32> = net.params_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = replay.params_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn train_validates_before_epoch_zero() {
        let ds = tiny_dataset(3, 10);
        let p = prepare_dataset(&ds, EncodingMode::Direction, 20, 1500).unwrap();
        // wrong class count
        let mut net = Network::build(tiny_net_cfg(4), 0).unwrap();
        assert!(train(&mut net, &p.train, &p.val, &p.classes, &tiny_train_cfg(0)).is_err());
        // wrong sequence length
        let mut net = Network::build(
            NetworkConfig {
                seq_len: 21,
                ..tiny_net_cfg(3)
            },
            0,
        )
        .unwrap();
        assert!(train(&mut net, &p.train, &p.val, &p.classes, &tiny_train_cfg(0)).is_err());
    }

    #[test]
    fn constant_classifier_scores_one_over_c() {
        let ds = tiny_dataset(4, 10);
        let p = prepare_dataset(&ds, EncodingMode::Direction, 20, 1500).unwrap();
        let mut net = Network::build(tiny_net_cfg(4), 0).unwrap();
        // bias the output layer towards class 0, everything else zero
        let zeros = vec![0.0f32; net.param_count().total];
        net.set_params_flat(&zeros).unwrap();
        net.output.bias[0] = 1.0;
        let m = evaluate(&net, &p.test, &p.classes).unwrap();
        assert!((m.accuracy - 0.25).abs() < 1e-12);
        // confusion: everything lands in column 0
        for row in &m.confusion {
            assert_eq!(row.iter().sum::<usize>(), row[0]);
        }
    }

    #[test]
    fn evaluate_is_order_independent() {
        let ds = tiny_dataset(3, 10);
        let p = prepare_dataset(&ds, EncodingMode::Direction, 20, 1500).unwrap();
        let net = Network::build(tiny_net_cfg(3), 4).unwrap();
        let a = evaluate(&net, &p.test, &p.classes).unwrap();
        let mut reversed = p.test.clone();
        reversed.reverse();
        let b = evaluate(&net, &reversed, &p.classes).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_accuracy_matches_confusion_trace() {
        let ds = tiny_dataset(3, 10);
        let p = prepare_dataset(&ds, EncodingMode::Direction, 20, 1500).unwrap();
        let net = Network::build(tiny_net_cfg(3), 4).unwrap();
        let m = evaluate(&net, &p.test, &p.classes).unwrap();
        let total: usize = m.confusion.iter().flatten().sum();
        let diag: usize = (0..3).map(|i| m.confusion[i][i]).sum();
        assert_eq!(m.accuracy, diag as f64 / total as f64);
        assert_eq!(total, p.test.len());
    }

    #[test]
    fn evaluate_rejects_empty_test() {
        let net = Network::build(tiny_net_cfg(3), 4).unwrap();
        assert!(evaluate(&net, &[], &[0, 1, 2]).is_err());
    }

    #[test]
    fn ablation_emits_four_rows_per_seed_deterministically() {
        let ds = tiny_dataset(2, 10);
        let base_net = tiny_net_cfg(2);
        let base_train = TrainConfig {
            max_epochs: 1,
            ..tiny_train_cfg(0)
        };
        let rows = run_ablation(&ds, &base_net, &base_train, &[1, 2]).unwrap();
        assert_eq!(rows.len(), 8);
        let rows2 = run_ablation(&ds, &base_net, &base_train, &[1, 2]).unwrap();
        assert_eq!(rows, rows2);
        let variants: std::collections::BTreeSet<&str> =
            rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(variants.len(), 4);
    }

    #[test]
    fn encoding_comparison_emits_two_rows_per_seed() {
        let ds = tiny_dataset(2, 10);
        let base_net = tiny_net_cfg(2);
        let base_train = TrainConfig {
            max_epochs: 1,
            ..tiny_train_cfg(0)
        };
        let rows = run_encoding_comparison(&ds, &base_net, &base_train, &[5]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].variant, "direction");
        assert_eq!(rows[1].variant, "raw");
    }

    #[test]
    fn history_csv_round_trips() {
        let history = TrainHistory {
            epochs: vec![
                EpochRecord {
                    train_loss: 2.302585,
                    train_acc: 0.125,
                    val_loss: 2.1,
                    val_acc: 0.25,
                },
                EpochRecord {
                    train_loss: 1.0,
                    train_acc: 0.5,
                    val_loss: 0.9,
                    val_acc: 0.625,
                },
            ],
            best_epoch: 1,
        };
        let csv = export_history(&history);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc");
        for (i, line) in lines[1..].iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[0].parse::<usize>().unwrap(), i + 1);
            let e = &history.epochs[i];
            assert!((fields[1].parse::<f64>().unwrap() - e.train_loss).abs() < 1e-6);
            assert!((fields[2].parse::<f64>().unwrap() - e.train_acc).abs() < 1e-6);
            assert!((fields[3].parse::<f64>().unwrap() - e.val_loss).abs() < 1e-6);
            assert!((fields[4].parse::<f64>().unwrap() - e.val_acc).abs() < 1e-6);
        }
    }

    #[test]
    fn history_csv_single_epoch_two_lines() {
        let history = TrainHistory {
            epochs: vec![EpochRecord {
                train_loss: 1.0,
                train_acc: 0.5,
                val_loss: f64::NAN,
                val_acc: f64::NAN,
            }],
            best_epoch: 0,
        };
        assert_eq!(export_history(&history).lines().count(), 2);
    }

    #[test]
    fn metrics_csv_contains_accuracy() {
        let m = Metrics {
            accuracy: 0.75,
            confusion: vec![vec![3, 1], vec![0, 4]],
            precision: vec![1.0, 0.8],
            recall: vec![0.75, 1.0],
        };
        let csv = export_metrics(&m, &[10, 20]);
        assert!(csv.contains("accuracy,,0.750000"));
        assert!(csv.contains("precision,10,1.000000"));
        assert!(csv.contains("recall,20,1.000000"));
        let conf = export_confusion(&m, &[10, 20]);
        assert_eq!(conf.lines().count(), 3);
        assert!(conf.starts_with("true_site,10,20\n10,3,1\n20,0,4\n"));
    }
}
