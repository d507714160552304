//! Speech enhancement combining a deterministic complex-masking enhancer
//! with score-based diffusion refinement.
//!
//! The crate is organized around the processing stages:
//!
//! - [`spectral`]: waveform/complex-spectrogram transforms, magnitude
//!   compression, and complex ratio masking.
//! - [`sde`]: the forward/reverse stochastic differential equation,
//!   predictor-corrector sampling, and trajectory ensembling.
//! - [`nn`]: a small reverse-mode autodiff tape with the layer primitives
//!   the networks are built from.
//! - [`gridblocks`]: full-band, sub-band, and cross-frame attention modules
//!   shared between the enhancer and the score networks.
//! - [`coffee`]: the coarse-first-then-fine deterministic enhancer.
//! - [`scorenet`]: repair-diffusion score networks (single and dual stream).
//! - [`pipeline`]: toy data synthesis, training loops, and end-to-end
//!   enhancement.
//! - [`evalkit`]: SI-SDR / SDR / spectral log-MSE metrics.
//!
//! All numeric kernels are generic over the scalar type via [`Scalar`];
//! concrete aliases for the common precisions live at the crate root.

pub mod error;
pub mod num;

pub mod checkpoint;
pub mod coffee;
pub mod config;
pub mod evalkit;
pub mod gridblocks;
pub mod nn;
pub mod pipeline;
pub mod scorenet;
pub mod sde;
pub mod spectral;
pub mod wav;

pub use error::{Error, Result};
pub use num::{Cplx, Scalar};

/// Scalar type used by the training/inference pipeline.
pub type PipelineFloat = f32;
/// Scalar type used by the high-precision oracles and gradient checks.
pub type OracleFloat = f64;

pub type Waveform32 = spectral::Waveform<f32>;
pub type Waveform64 = spectral::Waveform<f64>;
pub type Spectrogram32 = spectral::ComplexSpectrogram<f32>;
pub type Spectrogram64 = spectral::ComplexSpectrogram<f64>;
