use rand::Rng;

use super::Waveform;
use crate::{Error, Result, Scalar};

/// Mean of squares.
pub fn power<T: Scalar>(samples: &[T]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>() / samples.len() as f64
}

/// Adds a uniformly chosen contiguous segment of `noise`, scaled so that the
/// clean-to-noise power ratio is `snr_db`. Returns the mixture and the scaled
/// noise segment actually added.
pub fn mix_at_snr<T: Scalar, R: Rng + ?Sized>(
    clean: &Waveform<T>,
    noise: &Waveform<T>,
    snr_db: f64,
    rng: &mut R,
) -> Result<(Waveform<T>, Waveform<T>)> {
    if noise.len() < clean.len() {
        return Err(Error::InvalidArgument(format!(
            "noise ({} samples) shorter than clean ({} samples)",
            noise.len(),
            clean.len()
        )));
    }
    let offset = rng.gen_range(0..=noise.len() - clean.len());
    mix_at_snr_with_offset(clean, noise, snr_db, offset)
}

/// [`mix_at_snr`] with the noise segment start fixed.
pub fn mix_at_snr_with_offset<T: Scalar>(
    clean: &Waveform<T>,
    noise: &Waveform<T>,
    snr_db: f64,
    offset: usize,
) -> Result<(Waveform<T>, Waveform<T>)> {
    let n = clean.len();
    if offset + n > noise.len() {
        return Err(Error::InvalidArgument(format!(
            "noise segment [{offset}, {}) exceeds {} samples",
            offset + n,
            noise.len()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("snr {snr_db} dB")));
    }
    let segment = &noise.samples[offset..offset + n];
    let p_clean = power(&clean.samples);
    let p_noise = power(segment);
    if p_clean <= 0.0 {
        return Err(Error::Degenerate("clean signal has zero power".into()));
    }
    if p_noise <= 0.0 {
        return Err(Error::Degenerate("noise segment has zero power".into()));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let g = T::lit(gain);
    let scaled: Vec<T> = segment.iter().map(|&d| d * g).collect();
    let noisy = clean
        .samples
        .iter()
        .zip(&scaled)
        .map(|(&s, &d)| s + d)
        .collect();
    Ok((
        Waveform {
            samples: noisy,
            sample_rate: clean.sample_rate,
        },
        Waveform {
            samples: scaled,
            sample_rate: clean.sample_rate,
        },
    ))
}
