//! Objective quality measures: SI-SDR and segmental SNR.

use crate::dsp::Waveform;
use crate::{Error, Result, Scalar};

/// Reported SI-SDR for an exact reconstruction.
pub const SI_SDR_CAP_DB: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub si_sdr_db: f64,
    pub seg_snr_db: f64,
    pub mask_mse: f64,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.to_f64_lossy() * y.to_f64_lossy())
        .sum()
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at
/// [`SI_SDR_CAP_DB`].
pub fn si_sdr<T: Scalar>(est: &Waveform<T>, reference: &Waveform<T>) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::shape(
            "si_sdr",
            format!("{} vs {} samples", est.len(), reference.len()),
        ));
    }
    let ref_energy = dot(&reference.samples, &reference.samples);
    if ref_energy <= 0.0 {
        return Err(Error::Degenerate("si_sdr: silent reference".into()));
    }
    let alpha = dot(&est.samples, &reference.samples) / ref_energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (e, r) in est.samples.iter().zip(&reference.samples) {
        let t = alpha * r.to_f64_lossy();
        target += t * t;
        residual += (e.to_f64_lossy() - t).powi(2);
    }
    if residual <= 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).min(SI_SDR_CAP_DB))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegSnrConfig {
    pub frame: usize,
    pub hop: usize,
    pub floor_db: f64,
    pub ceil_db: f64,
}

impl Default for SegSnrConfig {
    fn default() -> Self {
        Self {
            frame: 512,
            hop: 256,
            floor_db: -10.0,
            ceil_db: 35.0,
        }
    }
}

/// Mean over non-silent reference frames of the clamped per-frame SNR.
/// Frames are full windows only, plus one trailing partial frame when the
/// signal is shorter than a window.
pub fn seg_snr<T: Scalar>(
    est: &Waveform<T>,
    reference: &Waveform<T>,
    cfg: &SegSnrConfig,
) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::shape(
            "seg_snr",
            format!("{} vs {} samples", est.len(), reference.len()),
        ));
    }
    if cfg.frame == 0 || cfg.hop == 0 {
        return Err(Error::InvalidArgument("seg_snr frame and hop must be > 0".into()));
    }
    let n = reference.len();
    let mut starts: Vec<usize> = (0..).map(|i| i * cfg.hop).take_while(|&s| s + cfg.frame <= n).collect();
    if starts.is_empty() {
        starts.push(0);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for s in starts {
        let end = (s + cfg.frame).min(n);
        let r = &reference.samples[s..end];
        let e = &est.samples[s..end];
        let sig = dot(r, r);
        if sig <= 0.0 {
            continue;
        }
        let err: f64 = r
            .iter()
            .zip(e)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).powi(2))
            .sum();
        let db = if err <= 0.0 {
            cfg.ceil_db
        } else {
            10.0 * (sig / err).log10()
        };
        total += db.clamp(cfg.floor_db, cfg.ceil_db);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate("seg_snr: every reference frame is silent".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;

    fn w(samples: Vec<f64>) -> Waveform<f64> {
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    fn tone(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.05).sin() + 0.3 * (i as f64 * 0.31).cos()).collect()
    }

    #[test]
    fn si_sdr_perfect_and_scaled() {
        let r = w(tone(1000));
        assert_eq!(si_sdr(&r, &r).unwrap(), 60.0);
        let scaled = w(r.samples.iter().map(|v| 2.0 * v).collect());
        assert_eq!(si_sdr(&scaled, &r).unwrap(), 60.0);
    }

    #[test]
    fn si_sdr_ten_db_with_orthogonal_noise() {
        // reference and noise are orthogonal square waves
        let r = w(vec![1.0, 1.0, -1.0, -1.0].repeat(50));
        let k = (0.1f64).sqrt();
        let n: Vec<f64> = [k, -k, k, -k].repeat(50);
        let est = w(r.samples.iter().zip(&n).map(|(a, b)| a + b).collect());
        assert!((si_sdr(&est, &r).unwrap() - 10.0).abs() < 1e-10);
    }

    #[test]
    fn si_sdr_is_scale_invariant() {
        let r = w(tone(800));
        let est = w(r.samples.iter().enumerate().map(|(i, v)| v + 0.1 * ((i * 7 % 13) as f64 - 6.0) / 6.0).collect());
        let base = si_sdr(&est, &r).unwrap();
        for s in [0.01, 0.5, 3.0, 1000.0] {
            let scaled = w(est.samples.iter().map(|v| s * v).collect());
            assert!((si_sdr(&scaled, &r).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn si_sdr_silent_reference() {
        assert!(si_sdr(&w(vec![1.0; 4]), &w(vec![0.0; 4])).is_err());
    }

    #[test]
    fn seg_snr_bounds() {
        let r = w(tone(2048));
        let cfg = SegSnrConfig::default();
        assert_eq!(seg_snr(&r, &r, &cfg).unwrap(), 35.0);
        let unit = w(vec![1.0; 2048]);
        // silence as the estimate leaves an error equal to the reference
        assert!(seg_snr(&w(vec![0.0; 2048]), &unit, &cfg).unwrap().abs() < 1e-12);
        // error 16x the reference power sits below the floor
        assert_eq!(seg_snr(&w(vec![-3.0; 2048]), &unit, &cfg).unwrap(), -10.0);
    }

    #[test]
    fn seg_snr_two_frame_hand_case() {
        // frame=4, hop=4: frame 0 SNR = 10·log10(4/1) , frame 1 SNR = 10·log10(4/0.04)
        let r = w(vec![1.0; 8]);
        let est = w(vec![1.5, 1.5, 1.5, 1.5, 1.1, 1.1, 1.1, 1.1]);
        let cfg = SegSnrConfig { frame: 4, hop: 4, ..Default::default() };
        let want = (10.0 * 4.0f64.log10() + 10.0 * 100.0f64.log10()) / 2.0;
        assert!((seg_snr(&est, &r, &cfg).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn seg_snr_skips_silent_frames() {
        let r = w([vec![0.0; 4], vec![1.0; 4]].concat());
        let est = w([vec![5.0; 4], vec![1.5; 4]].concat());
        let cfg = SegSnrConfig { frame: 4, hop: 4, ..Default::default() };
        assert!((seg_snr(&est, &r, &cfg).unwrap() - 10.0 * 4.0f64.log10()).abs() < 1e-10);
        assert!(seg_snr(&est, &w(vec![0.0; 8]), &cfg).is_err());
    }
}
