//! Spectral-masking speech enhancement with perceptually weighted training
//! losses.
//!
//! The pipeline estimates a time-frequency mask from normalized noisy
//! log-magnitude features, applies it to the noisy magnitude spectrum, and
//! resynthesizes with the noisy phase. Training minimizes a spectral MSE
//! that can weight each frequency bin by a standard pre-emphasis or
//! equal-loudness response, optionally followed by cubic-root loudness
//! compression.

pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod preemphasis;

pub use error::{Error, Result};
