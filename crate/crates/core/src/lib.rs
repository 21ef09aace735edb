//! Federated adversarial cross training for multi-source, single-target
//! unsupervised domain adaptation.
//!
//! Source clients hold labeled data from differently shifted domains, a
//! target client holds unlabeled data, and a server coordinates rounds in
//! which pairs of source models are cross-trained and their disagreement on
//! the target is minimized with respect to a shared feature generator.

pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod strategy;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
