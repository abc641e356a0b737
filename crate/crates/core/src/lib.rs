//! Post-hoc Bayesian layers for out-of-distribution detection.
//!
//! A small from-scratch network stack (tensors, conv/linear/batchnorm layers,
//! backpropagation, SGD) is trained on an in-distribution task. At inference,
//! selected layers are replaced by Gaussians centred on the trained weights and
//! sampled from their low-density region; the Monte-Carlo ensemble is scored
//! with an energy-based uncertainty score and thresholded into ID/OOD.

pub mod bayes;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod evalmetrics;
pub mod network;
pub mod numerics;
pub mod scoring;

pub use error::{Error, Result};
