//! Singing-voice deepfake detection toolkit.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`dsp`]: WAV I/O, resampling, segmentation, power spectrograms and LFCCs
//! - [`manifest`]: JSON-lines clip manifests, splits and the tempo index
//! - [`augment`]: RawBoost-style colored noise for vocals and beat-matched
//!   instrumental substitution
//! - [`autograd`]: a small f64 tensor library with reverse-mode autodiff
//! - [`model`]: the spectro-temporal graph-attention detector
//! - [`train`]: training, clip scoring and equal error rate
//!
//! Batch-level loops (per-clip gradients, scoring, augmentation) go through
//! [`par`], which uses rayon when the `parallel` feature is on and plain
//! iterators otherwise. Results are identical either way.

pub mod augment;
pub mod autograd;
pub mod config;
pub mod dsp;
pub mod error;
pub mod manifest;
pub mod model;
pub mod par;
pub mod seed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
