//! Weakly augmented variational autoencoder for time-series anomaly detection.
//!
//! A shared encoder/decoder is trained on two normalised views of every
//! window, with a mutual-information term (contrastive or adversarial)
//! tying the two latents together. Windows are scored by reconstruction
//! error and flagged above a percentile threshold.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix `f64`, which is what the pipeline and the command-line tool use.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod detect;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod objective;
pub mod scalar;
pub mod ssl;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f64>;
pub type Graph = numerics::Graph<f64>;
pub type AdamState = numerics::AdamState<f64>;
pub type ModelParams = vae::ModelParams<f64>;
pub type LatentGaussian = vae::LatentGaussian<f64>;
pub type Discriminator = ssl::Discriminator<f64>;
pub type SeriesFrame = data::SeriesFrame<f64>;
pub type WindowBatch = data::WindowBatch<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
pub type Trained = train::Trained<f64>;
pub type RunOutput = train::RunOutput<f64>;
