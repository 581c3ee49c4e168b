//! Traffic-trace data model and the two fixed-length input encodings.
//!
//! A [`Trace`] is an ordered sequence of signed packet sizes with timestamps.
//! Positive sizes are packets toward the client ("in"), negative sizes are
//! packets away from it ("out"). The classifier consumes a fixed-length view
//! of a trace produced by [`encode_direction`] (signs only) or [`encode_raw`]
//! (sizes scaled into `[-1, 1]`), zero-padded past the end of the trace.

use crate::error::{Error, Result};

/// One observed packet (or cell / record / segment, depending on the layer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    /// Seconds since trace start. Non-negative.
    pub timestamp: f64,
    /// Signed size in bytes. Positive = toward the client, negative = away.
    /// Never zero.
    pub size: i64,
}

/// Transport layer a trace was captured at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    /// Fixed-length cells; `|size|` is the same for every packet.
    Cell,
    /// TLS records carrying one or more cells.
    Tls,
    /// TCP segments, bounded by the maximum segment size.
    Tcp,
}

impl Layer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Layer::Cell => "cell",
            Layer::Tls => "tls",
            Layer::Tcp => "tcp",
        }
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cell" => Ok(Layer::Cell),
            "tls" => Ok(Layer::Tls),
            "tcp" => Ok(Layer::Tcp),
            other => Err(Error::InvalidConfig(format!("unknown layer '{other}'"))),
        }
    }
}

/// An observed page load: a labelled, time-ordered packet sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Site label.
    pub site: u32,
    /// Capture layer.
    pub layer: Layer,
    /// Packets in arrival order. Non-empty, timestamps non-decreasing.
    pub packets: Vec<PacketRecord>,
}

impl Trace {
    /// Build a trace, checking the packet invariants: non-empty, non-negative
    /// and non-decreasing timestamps, no zero sizes, and fixed `|size|` at
    /// the cell layer.
    pub fn new(site: u32, layer: Layer, packets: Vec<PacketRecord>) -> Result<Self> {
        if packets.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mut prev_ts = 0.0f64;
        let cell_size = packets[0].size.unsigned_abs();
        for (i, p) in packets.iter().enumerate() {
            if p.size == 0 {
                return Err(Error::InvalidTrace(format!("packet {i} has zero size")));
            }
            if !p.timestamp.is_finite() || p.timestamp < 0.0 {
                return Err(Error::InvalidTrace(format!(
                    "packet {i} has invalid timestamp {}",
                    p.timestamp
                )));
            }
            if p.timestamp < prev_ts {
                return Err(Error::InvalidTrace(format!(
                    "packet {i} timestamp decreases ({} < {prev_ts})",
                    p.timestamp
                )));
            }
            prev_ts = p.timestamp;
            if layer == Layer::Cell && p.size.unsigned_abs() != cell_size {
                return Err(Error::InvalidTrace(format!(
                    "cell-layer trace mixes sizes {cell_size} and {}",
                    p.size.unsigned_abs()
                )));
            }
        }
        Ok(Trace {
            site,
            layer,
            packets,
        })
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

/// A classifier input pair: fixed-length sequence plus normalized
/// statistical features, with the site label.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    /// Fixed-length packet sequence encoding.
    pub sequence: Vec<f32>,
    /// Normalized statistical feature vector.
    pub stats: Vec<f32>,
    /// Site id.
    pub label: u32,
}

/// Default fixed sequence length. Matches the minimum-length dataset filter
/// so no in-filter trace encodes to all padding.
pub const DEFAULT_SEQ_LEN: usize = 500;

/// Default scale divisor for the raw-size encoding (conventional Ethernet MTU).
pub const DEFAULT_RAW_SCALE: u32 = 1500;

/// Encode a trace as a ±1 direction sequence of length `len`.
///
/// Entry `i` is the sign of packet `i`'s size; traces longer than `len` keep
/// the first `len` packets, shorter ones are zero-padded.
pub fn encode_direction(trace: &Trace, len: usize) -> Result<Vec<f32>> {
    if trace.packets.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if len == 0 {
        return Err(Error::InvalidConfig("sequence length must be >= 1".into()));
    }
    let mut seq = vec![0.0f32; len];
    for (slot, p) in seq.iter_mut().zip(trace.packets.iter()) {
        *slot = if p.size > 0 { 1.0 } else { -1.0 };
    }
    Ok(seq)
}

/// Encode a trace as scaled signed sizes, clamped to `[-1, 1]`.
///
/// Entry `i` is `size_i / scale`; truncation and padding follow
/// [`encode_direction`].
pub fn encode_raw(trace: &Trace, len: usize, scale: u32) -> Result<Vec<f32>> {
    if trace.packets.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if len == 0 {
        return Err(Error::InvalidConfig("sequence length must be >= 1".into()));
    }
    if scale == 0 {
        return Err(Error::InvalidConfig("raw scale must be >= 1".into()));
    }
    let scale = scale as f64;
    let mut seq = vec![0.0f32; len];
    for (slot, p) in seq.iter_mut().zip(trace.packets.iter()) {
        *slot = (p.size as f64 / scale).clamp(-1.0, 1.0) as f32;
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn trace_from_sizes(sizes: &[i64]) -> Trace {
        let packets = sizes
            .iter()
            .enumerate()
            .map(|(i, &size)| PacketRecord {
                timestamp: i as f64 * 0.1,
                size,
            })
            .collect();
        Trace::new(0, Layer::Tcp, packets).unwrap()
    }

    #[test]
    fn direction_pads_with_zeros() {
        let t = trace_from_sizes(&[512, -512, -512]);
        let seq = encode_direction(&t, 5).unwrap();
        assert_eq!(seq, vec![1.0, -1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn direction_truncates_head() {
        let t = trace_from_sizes(&[512, -512, -512, 512, -512, 512]);
        let seq = encode_direction(&t, 4).unwrap();
        assert_eq!(seq, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn direction_all_incoming() {
        let t = trace_from_sizes(&vec![1; 500]);
        let seq = encode_direction(&t, 500).unwrap();
        assert_eq!(seq.len(), 500);
        assert!(seq.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn raw_divides_and_pads() {
        let t = trace_from_sizes(&[1500, -750]);
        let seq = encode_raw(&t, 3, 1500).unwrap();
        assert_eq!(seq, vec![1.0, -0.5, 0.0]);
    }

    #[test]
    fn raw_clamps_oversize() {
        let t = trace_from_sizes(&[3000]);
        assert_eq!(encode_raw(&t, 1, 1500).unwrap(), vec![1.0]);
    }

    #[test]
    fn raw_negative_full_size() {
        let t = trace_from_sizes(&[-1500]);
        assert_eq!(encode_raw(&t, 2, 1500).unwrap(), vec![-1.0, 0.0]);
    }

    #[test]
    fn empty_trace_rejected() {
        let t = Trace {
            site: 0,
            layer: Layer::Tcp,
            packets: vec![],
        };
        assert!(matches!(encode_direction(&t, 4), Err(Error::EmptyTrace)));
        assert!(matches!(encode_raw(&t, 4, 1500), Err(Error::EmptyTrace)));
    }

    #[test]
    fn trace_new_rejects_violations() {
        assert!(Trace::new(0, Layer::Tcp, vec![]).is_err());
        // zero size
        assert!(Trace::new(
            0,
            Layer::Tcp,
            vec![PacketRecord {
                timestamp: 0.0,
                size: 0
            }]
        )
        .is_err());
        // decreasing timestamps
        assert!(Trace::new(
            0,
            Layer::Tcp,
            vec![
                PacketRecord {
                    timestamp: 1.0,
                    size: 10
                },
                PacketRecord {
                    timestamp: 0.5,
                    size: -10
                },
            ]
        )
        .is_err());
        // mixed sizes at the cell layer
        assert!(Trace::new(
            0,
            Layer::Cell,
            vec![
                PacketRecord {
                    timestamp: 0.0,
                    size: 512
                },
                PacketRecord {
                    timestamp: 0.1,
                    size: -256
                },
            ]
        )
        .is_err());
    }

    #[test]
    fn cell_layer_accepts_fixed_size_both_directions() {
        let t = Trace::new(
            3,
            Layer::Cell,
            vec![
                PacketRecord {
                    timestamp: 0.0,
                    size: 512,
                },
                PacketRecord {
                    timestamp: 0.1,
                    size: -512,
                },
            ],
        );
        assert!(t.is_ok());
    }

    #[test]
    fn sign_consistency_with_raw() {
        let t = trace_from_sizes(&[700, -1400, 300, -52]);
        let dir = encode_direction(&t, 6).unwrap();
        let raw = encode_raw(&t, 6, 1500).unwrap();
        for (d, r) in dir.iter().zip(raw.iter()) {
            assert_eq!(*d, r.signum() * if *r == 0.0 { 0.0 } else { 1.0 });
        }
    }
}
