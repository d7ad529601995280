//! Conditional-diffusion audio-visual saliency prediction.
//!
//! This crate contains the full desk-scale stack:
//!
//! - [`tensor`] / [`tape`] / [`ops`]: a dense `f64` tensor type with
//!   reverse-mode autodiff (matmul, 2-D/3-D convolution, softmax, layer
//!   norm, fused attention, resampling) and finite-difference verification
//!   in [`gradcheck`].
//! - [`audio`]: waveform to log-Mel slices (Hann STFT, triangular Mel
//!   filterbank, overlapping slice extraction).
//! - [`encoders`]: small video and audio feature encoders producing a
//!   four-level spatio-temporal pyramid and per-slice audio tokens.
//! - [`diffusion`]: cosine noise schedule, forward corruption, deterministic
//!   reverse updates, and the few-step sampling loop.
//! - [`unet`] / [`model`]: the conditional denoiser: a noise-map encoder,
//!   audio-visual fusion with a spatial soft mask, compressed cross-attention
//!   over spatio-temporal tokens, and a decoder that refines coarse-to-fine.
//! - [`training`]: losses, Adam, gradient clipping, and the training loop.
//! - [`metrics`]: saliency metrics (CC, NSS, AUC-Judd, SIM, KL) and report
//!   generation.
//! - [`synth`]: a synthetic sounding-object dataset generator.
//! - [`config`]: flat `key = value` run configuration shared by the CLI.

pub mod ablation;
pub mod audio;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod unet;

pub use error::{Error, Result};
pub use rng::CounterRng;
pub use tape::{Tape, TensorId};
pub use tensor::Tensor;
