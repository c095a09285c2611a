//! Split federated learning with product-quantized cut-layer activations.
//!
//! The crate simulates SplitFed-style training, where clients run the first
//! layers of a network and a server runs the rest, and the FedLite variant in
//! which each client compresses its mini-batch of cut-layer activations with a
//! grouped product quantizer before upload and corrects the returned gradient
//! with a `lambda * (z - z~)` term.
//!
//! Modules, bottom up:
//!
//! * [`nn`]: dense networks with explicit forward/backward passes
//! * [`quantizer`]: subvector division, grouping, k-means, codec, wire format
//! * [`protocol`]: round messages and exact bit accounting
//! * [`federation`]: synthetic and CSV datasets, client partitioning
//! * [`trainer`]: SplitFed and FedLite rounds, the training loop
//! * [`analysis`]: convergence-bound evaluation and constant estimation
//! * [`harness`]: experiment configs, single runs, sweeps, trade-off tables
//!
//! Runnable walkthroughs live in `examples/`; the `fedlite` binary exposes the
//! `run` and `sweep` commands.

pub mod analysis;
pub mod error;
pub mod federation;
pub mod harness;
pub mod nn;
pub mod protocol;
pub mod quantizer;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Matrix;
