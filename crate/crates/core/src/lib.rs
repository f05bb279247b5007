//! Simulator for optical in-network gradient aggregation.
//!
//! Servers encode quantized gradients as PAM4 symbol frames, an optical
//! neural network inside the interconnect maps the averaged frames to the
//! quantized mean, and a splitting unit broadcasts the result back. The crate
//! covers the exact arithmetic oracle and its datasets, the trainable network
//! surrogate with hardware-aware training, the MZI mesh mathematics and cost
//! model, and system-level simulation of single and cascaded units against a
//! ring all-reduce baseline.

pub mod artifact;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod onn;
pub mod photonic;
pub mod topo;
pub mod trainer;

pub use error::{OptincError, Result};
