//! Side-channel statistical features and their train-split normalization.
//!
//! Features are computed on the full trace, not the truncated window fed to
//! the convolution stack: packet/byte totals are trace-global quantities.

use crate::error::{Error, Result};
use crate::trace::Trace;

/// Number of statistical features.
pub const STAT_DIM: usize = 8;

/// Column names for CSV export, in vector order.
pub const FEATURE_NAMES: [&str; STAT_DIM] = [
    "total_packets",
    "in_packets",
    "out_packets",
    "total_bytes",
    "in_bytes",
    "out_bytes",
    "in_ratio",
    "duration",
];

/// Statistical summary of one trace.
///
/// Identities: `total_packets = in_packets + out_packets`,
/// `total_bytes = in_bytes + out_bytes`, `0 <= in_ratio <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatFeatures {
    pub total_packets: f64,
    pub in_packets: f64,
    pub out_packets: f64,
    pub total_bytes: f64,
    pub in_bytes: f64,
    pub out_bytes: f64,
    pub in_ratio: f64,
    pub duration: f64,
}

impl StatFeatures {
    pub fn to_vec(self) -> [f64; STAT_DIM] {
        [
            self.total_packets,
            self.in_packets,
            self.out_packets,
            self.total_bytes,
            self.in_bytes,
            self.out_bytes,
            self.in_ratio,
            self.duration,
        ]
    }
}

/// Compute the statistical features of a trace.
pub fn extract_stats(trace: &Trace) -> Result<StatFeatures> {
    if trace.packets.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut in_packets = 0u64;
    let mut out_packets = 0u64;
    let mut in_bytes = 0u64;
    let mut out_bytes = 0u64;
    for p in &trace.packets {
        if p.size > 0 {
            in_packets += 1;
            in_bytes += p.size as u64;
        } else {
            out_packets += 1;
            out_bytes += p.size.unsigned_abs();
        }
    }
    let total_packets = in_packets + out_packets;
    let duration =
        trace.packets.last().unwrap().timestamp - trace.packets.first().unwrap().timestamp;
    Ok(StatFeatures {
        total_packets: total_packets as f64,
        in_packets: in_packets as f64,
        out_packets: out_packets as f64,
        total_bytes: (in_bytes + out_bytes) as f64,
        in_bytes: in_bytes as f64,
        out_bytes: out_bytes as f64,
        in_ratio: in_packets as f64 / total_packets as f64,
        duration,
    })
}

/// Minimum per-feature standard deviation. Constant features normalize to 0
/// instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-feature z-score parameters, fitted on the training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; STAT_DIM],
    pub std: [f64; STAT_DIM],
}

/// Fit per-feature mean and population standard deviation.
pub fn fit_normalizer(features: &[StatFeatures]) -> Result<Normalizer> {
    if features.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: features.len(),
        });
    }
    let n = features.len() as f64;
    let mut mean = [0.0; STAT_DIM];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f.to_vec()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; STAT_DIM];
    for f in features {
        for ((s, v), m) in var.iter_mut().zip(f.to_vec()).zip(mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let mut std = [0.0; STAT_DIM];
    for (s, v) in std.iter_mut().zip(var) {
        *s = (v / n).sqrt().max(STD_FLOOR);
    }
    Ok(Normalizer { mean, std })
}

/// Z-score a feature vector with fitted parameters.
pub fn normalize(f: &StatFeatures, n: &Normalizer) -> [f64; STAT_DIM] {
    let mut out = f.to_vec();
    for ((v, m), s) in out.iter_mut().zip(n.mean).zip(n.std) {
        *v = (*v - m) / s;
    }
    out
}

/// Render a feature matrix as CSV, one row per trace.
pub fn features_csv(features: &[StatFeatures]) -> String {
    let mut out = String::new();
    out.push_str(&FEATURE_NAMES.join(","));
    out.push('\n');
    for f in features {
        let row: Vec<String> = f.to_vec().iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
