//! Residual CNN image denoiser trained with a dense-sparse(-dense) schedule.
//!
//! The crate is self-contained: tensors and their gradients ([`ops`]), the
//! layer stack ([`network`]), magnitude masking and the training phases
//! ([`dsd`]), image and noise handling ([`data`]), quality metrics
//! ([`metrics`]), checkpoints and run configuration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dsd;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{Network, NetworkConfig};
pub use tensor::Tensor;
