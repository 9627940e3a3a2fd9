//! Selective state-space speech enhancement.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense tensors, a single-use reverse-mode tape and a
//!   finite-difference gradient checker.
//! - [`dsp`]: WAV I/O, square-root-Hann STFT/iSTFT and SNR-controlled mixing.
//! - [`masks`]: IRM / PSM training targets, mask application and the
//!   mask-approximation loss.
//! - [`ssm`]: zero-order-hold discretisation, input-dependent
//!   parameterisation and three scan evaluators (sequential, Blelloch
//!   parallel, LTI convolution kernel).
//! - [`model`]: depthwise convolutions, Mamba and MambaDC layers, the full
//!   mask estimator, parameter initialisation and checkpoints.
//! - [`train`]: dynamic mixing, batching, Adam, warm-up schedule and the
//!   training loop.
//! - [`metrics`]: SI-SDR and segmental SNR.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root pin the two concrete precisions.

pub mod dsp;
pub mod error;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use numerics::{Tape, Tensor, Var};

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Tape32 = numerics::Tape<f32>;
pub type Tape64 = numerics::Tape<f64>;
pub type Spectrogram32 = dsp::Spectrogram<f32>;
pub type Spectrogram64 = dsp::Spectrogram<f64>;
pub type NetworkWeights32 = model::NetworkWeights<f32>;
pub type NetworkWeights64 = model::NetworkWeights<f64>;
