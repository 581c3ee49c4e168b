//! From-scratch differentiable engine.
//!
//! No autodiff: the computation graph is the fixed architecture in
//! [`network`], and every backward pass is the hand-derived exact gradient
//! of its forward pass, verified against central finite differences in the
//! test suites.

pub mod adam;
pub mod checkpoint;
pub mod network;
pub mod ops;

pub use adam::{AdamParams, AdamState};
pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint};
pub use network::{ForwardCache, Gradients, Network, NetworkConfig, ParamCount};
pub use ops::{cross_entropy, dropout, relu, softmax, ConvLayer, Dense, Mode};
