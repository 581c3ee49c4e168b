//! Website-fingerprinting attack toolkit.
//!
//! The crate covers the full closed-world pipeline:
//!
//! - [`trace`] — traffic-trace data model and the two fixed-length input
//!   encodings (±1 direction, scaled raw size).
//! - [`ingest`] — trace-file parsing, dataset filtering, and deterministic
//!   train/validation/test splits.
//! - [`transport`] — cell/TLS-record/TCP-segment encapsulation model and a
//!   parametric synthetic trace generator.
//! - [`stats`] — side-channel statistical features and train-split
//!   normalization.
//! - [`nn`] — from-scratch differentiable engine: causal dilated 1-D
//!   convolution, dense fusion layers, dropout, softmax cross-entropy, and
//!   Adam, with exact analytic gradients.
//! - [`train`] — minibatch training loop, early stopping, evaluation metrics,
//!   and the ablation / encoding-comparison protocols with CSV export.
//!
//! Direction convention: positive packet sizes are packets flowing *toward*
//! the client ("in"), negative sizes flow away from it ("out"). Some traffic
//! corpora use the opposite sign; convert before ingesting external data.

pub mod error;
pub mod ingest;
pub mod nn;
pub mod seeding;
pub mod stats;
pub mod trace;
pub mod train;
pub mod transport;

pub use error::{Error, Result};
pub use trace::{EncodedSample, Layer, PacketRecord, Trace};
