//! Uncertainty-aware conditional GAN for image-to-image translation.
//!
//! The generator predicts, per pixel, the location `x̂`, scale `α̂` and shape
//! `β̂` of a generalized Gaussian residual model and is trained with the
//! matching negative log-likelihood plus an adversarial term. Monte Carlo
//! dropout at inference adds an epistemic term to the aleatoric variance.

pub mod checkpoint;
pub mod data_sim;
pub mod error;
pub mod ggd;
pub mod inference;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod seed;
pub mod special;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
