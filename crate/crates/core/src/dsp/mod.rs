//! Waveforms, STFT analysis/synthesis and SNR-controlled mixing.

mod mix;
mod stft;
mod wav;

pub use mix::{mix_at_snr, mix_at_snr_with_offset, power};
pub use stft::{istft, magnitude, phase, stft, Spectrogram, StftConfig, WindowKind};
pub use wav::{load_wav, save_wav, WavEncoding};

use crate::{Error, Result, Scalar};

/// Sample rate accepted by every pipeline entry point.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono signal with amplitudes nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("waveform must have at least one sample".into()));
        }
        if sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedSampleRate(sample_rate));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Waveform<U> {
        Waveform {
            samples: self.samples.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
            sample_rate: self.sample_rate,
        }
    }
}
