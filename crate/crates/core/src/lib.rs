//! Reconstruction-error anomaly detection for chest X-ray style images.
//!
//! Convolutional autoencoders (plain, vanilla-adversarial and
//! Wasserstein-adversarial) are trained on "normal" images only; held-out
//! images are scored by their mean squared reconstruction error and
//! evaluated with k-fold ROC AUC.

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod nets;
pub mod scoring;
mod seed;
pub mod training;

pub use error::{Error, Result};
pub use seed::derive_seed;
