//! Training and evaluation engine for streamable convolutional-recurrent
//! audio effect models, centered on dynamic range compression.
//!
//! The crate is split along the pipeline:
//!
//! * [`autodiff`] — a small reverse-mode differentiation core with exactly
//!   the primitive layers the effect processor and its state prediction
//!   network need, plus a finite-difference gradient checker.
//! * [`model`] — the SPTMod processor, the state prediction network (SPN),
//!   the padding-free length/crop solver and cached-padding machinery for
//!   streamed inference.
//! * [`losses`] — MAE, ESR, multi-resolution STFT and multi-resolution
//!   energy ESR terms with their weighted sum, and the radix-2 FFT backing
//!   the spectral terms.
//! * [`dataset`] — synthetic source audio, a reference feed-forward
//!   compressor that generates targets, parameter sampling and
//!   cross-validation splits.
//! * [`trainer`] — the TBPTT optimization loop: batch planning over long
//!   sequences, state carrying with gradient detachment, SPN warm-start,
//!   Adam updates, early stopping, and windowed/streamed validation.
//! * [`experiment`] — (N, B, L) grid sweeps with median/MAD aggregation and
//!   table rendering.
//!
//! The crate is `no_std` (with `alloc`). All transcendental math routes
//! through `libm` so forward values are bit-identical across platforms.
//! File formats, WAV handling and the command line live in the companion
//! `sptmod-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod clock;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
