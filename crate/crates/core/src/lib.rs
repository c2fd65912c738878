//! Unsupervised point-set encoding with activity-aware Hebbian learning and
//! distance-based k-winners-take-all, plus the sampling set decoder, latent
//! LSTM predictor, baselines and analytic cost model built around it.

pub mod artifacts;
pub mod baselines;
mod checkpoint;
pub mod config;
pub mod costmodel;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod hebbian;
pub mod numerics;
pub mod pipeline;
pub mod predictor;
pub mod seeds;
pub mod setdecoder;

pub use error::{Error, Result};
