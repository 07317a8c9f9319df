//! Federated learning by sharing synthetic loss approximations.
//!
//! Clients distill their local loss landscape into a small synthetic set by
//! radius-constrained gradient matching; the server optimizes the union of
//! synthetic sets inside the region where the approximation holds. A
//! record-level differentially private mode clips and noises real-data
//! gradients and tracks the privacy cost with a Rényi-DP accountant.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod distill;
pub mod error;
pub mod federation;
pub mod harness;
pub mod models;
pub mod privacy;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
