use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::numerics::Tensor;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WindowKind {
    /// Square root of the periodic (DFT-even) Hann window.
    #[default]
    SqrtHann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub win_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            win_length: 512,
            hop: 256,
            fft_size: 512,
            window: WindowKind::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win_length || self.win_length > self.fft_size {
            return Err(Error::InvalidArgument(format!(
                "stft needs 0 < hop <= win_length <= fft_size, got hop {} win {} fft {}",
                self.hop, self.win_length, self.fft_size
            )));
        }
        if self.fft_size % 2 != 0 {
            return Err(Error::InvalidArgument("fft_size must be even".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `1 + ceil(max(0, T − win) / hop)`.
    pub fn frame_count(&self, samples: usize) -> usize {
        1 + samples.saturating_sub(self.win_length).div_ceil(self.hop)
    }

    /// Longest signal an `frames`-frame spectrogram can cover.
    pub fn reconstructable_len(&self, frames: usize) -> usize {
        (frames - 1) * self.hop + self.win_length
    }

    pub fn window<T: Scalar>(&self) -> Vec<T> {
        match self.window {
            WindowKind::SqrtHann => {
                let n = self.win_length as f64;
                (0..self.win_length)
                    .map(|i| {
                        let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos();
                        T::lit(hann.sqrt())
                    })
                    .collect()
            }
        }
    }
}

/// One-sided complex STFT, `frames × bins` stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<T>,
    pub im: Vec<T>,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            re: vec![T::zero(); frames * bins],
            im: vec![T::zero(); frames * bins],
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

pub fn stft<T: Scalar>(wave: &Waveform<T>, cfg: &StftConfig) -> Result<Spectrogram<T>> {
    cfg.validate()?;
    if wave.samples.is_empty() {
        return Err(Error::InvalidArgument("stft of an empty waveform".into()));
    }
    let frames = cfg.frame_count(wave.len());
    let bins = cfg.bins();
    let window = cfg.window::<T>();
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.fft_size);
    let mut spec = Spectrogram::zeros(frames, bins);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    for l in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
        let start = l * cfg.hop;
        for (i, &w) in window.iter().enumerate() {
            if let Some(&x) = wave.samples.get(start + i) {
                buf[i].re = x * w;
            }
        }
        fft.process(&mut buf);
        for k in 0..bins {
            spec.re[l * bins + k] = buf[k].re;
            spec.im[l * bins + k] = buf[k].im;
        }
    }
    Ok(spec)
}

/// Weighted overlap-add synthesis with the analysis window, normalised by the
/// summed squared windows and truncated to `out_len` samples. Samples whose
/// window sum vanishes (the first sample, where the periodic Hann is zero)
/// come out as zero.
pub fn istft<T: Scalar>(
    spec: &Spectrogram<T>,
    cfg: &StftConfig,
    out_len: usize,
) -> Result<Waveform<T>> {
    cfg.validate()?;
    if spec.bins != cfg.bins() {
        return Err(Error::shape(
            "istft",
            format!("{} bins for fft_size {}", spec.bins, cfg.fft_size),
        ));
    }
    let limit = cfg.reconstructable_len(spec.frames);
    if out_len == 0 || out_len > limit {
        return Err(Error::InvalidArgument(format!(
            "out_len {out_len} outside 1..={limit} for {} frames",
            spec.frames
        )));
    }
    let n = cfg.fft_size;
    let bins = spec.bins;
    let window = cfg.window::<T>();
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(n);
    let mut acc = vec![T::zero(); limit];
    let mut wsum = vec![T::zero(); limit];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let scale = T::one() / T::count(n);
    for l in 0..spec.frames {
        for k in 0..bins {
            buf[k] = Complex::new(spec.re[l * bins + k], spec.im[l * bins + k]);
        }
        for k in bins..n {
            buf[k] = buf[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = l * cfg.hop;
        for (i, &w) in window.iter().enumerate() {
            acc[start + i] += buf[i].re * scale * w;
            wsum[start + i] += w * w;
        }
    }
    let floor = T::lit(1e-10);
    let samples = acc
        .iter()
        .zip(&wsum)
        .take(out_len)
        .map(|(&a, &w)| if w > floor { a / w } else { T::zero() })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: super::SAMPLE_RATE,
    })
}

/// `sqrt(re² + im²)` as an `L×K` tensor.
pub fn magnitude<T: Scalar>(spec: &Spectrogram<T>) -> Tensor<T> {
    let data = spec
        .re
        .iter()
        .zip(&spec.im)
        .map(|(&r, &i)| r.hypot(i))
        .collect();
    Tensor::new(vec![spec.frames, spec.bins], data).expect("spectrogram dims are positive")
}

/// `atan2(im, re)` in `(−π, π]`; zero cells map to 0.
pub fn phase<T: Scalar>(spec: &Spectrogram<T>) -> Tensor<T> {
    let data = spec
        .re
        .iter()
        .zip(&spec.im)
        .map(|(&r, &i)| i.atan2(r))
        .collect();
    Tensor::new(vec![spec.frames, spec.bins], data).expect("spectrogram dims are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(samples: Vec<f64>) -> Waveform<f64> {
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    fn noise(len: usize, seed: u64) -> Waveform<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        wave((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn frame_count_formula() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.frame_count(1024), 3);
        assert_eq!(cfg.frame_count(1), 1);
        assert_eq!(cfg.frame_count(512), 1);
        assert_eq!(cfg.frame_count(513), 2);
        assert_eq!(stft(&wave(vec![0.0; 1024]), &cfg).unwrap().frames, 3);
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = StftConfig::default();
        let s = stft(&wave(vec![0.0; 3000]), &cfg).unwrap();
        assert_eq!(s.bins, 257);
        assert!(s.re.iter().chain(&s.im).all(|&v| v == 0.0));
        let w = istft(&s, &cfg, 3000).unwrap();
        assert!(w.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sinusoid_peaks_at_bin_32() {
        let cfg = StftConfig::default();
        let w = wave(
            (0..16_000)
                .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16_000.0).sin())
                .collect(),
        );
        let spec = stft(&w, &cfg).unwrap();
        let mag = magnitude(&spec);
        // the last frame is partially zero-padded; every full frame must peak at 32
        let full = (16_000 - 512) / 256 + 1;
        for l in 0..full {
            let row = mag.row(l);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, 32, "frame {l}");
        }
    }

    #[test]
    fn window_is_cola_at_half_overlap() {
        let cfg = StftConfig::default();
        let w = cfg.window::<f64>();
        for i in 0..cfg.hop {
            let s = w[i] * w[i] + w[i + cfg.hop] * w[i + cfg.hop];
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn round_trip_noise() {
        let cfg = StftConfig::default();
        let x = noise(8000, 7);
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg, x.len()).unwrap();
        // sample 0 sits under a zero analysis weight
        let err = x.samples[1..]
            .iter()
            .zip(&y.samples[1..])
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn out_len_beyond_frames_is_rejected() {
        let cfg = StftConfig::default();
        let s = stft(&noise(1024, 1), &cfg).unwrap();
        assert!(istft(&s, &cfg, 1024).is_ok());
        assert!(istft(&s, &cfg, 1025).is_err());
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig::default();
        let x = noise(4096, 3);
        let spec = stft(&x, &cfg).unwrap();
        let window = cfg.window::<f64>();
        for l in 0..spec.frames {
            let start = l * cfg.hop;
            let time_energy: f64 = window
                .iter()
                .enumerate()
                .map(|(i, w)| x.samples.get(start + i).map_or(0.0, |v| (v * w).powi(2)))
                .sum();
            let k = spec.bins;
            let cell = |b: usize| spec.re[l * k + b].powi(2) + spec.im[l * k + b].powi(2);
            let freq_energy = (cell(0)
                + cell(k - 1)
                + 2.0 * (1..k - 1).map(cell).sum::<f64>())
                / cfg.fft_size as f64;
            assert!((time_energy - freq_energy).abs() <= 1e-8 * time_energy.max(1e-30));
        }
    }

    #[test]
    fn magnitude_and_phase_conventions() {
        let s = Spectrogram {
            frames: 1,
            bins: 2,
            re: vec![3.0f64, 0.0],
            im: vec![4.0, 0.0],
        };
        assert_eq!(magnitude(&s).data(), &[5.0, 0.0]);
        let p = phase(&s);
        assert_eq!(p.data()[1], 0.0);
        assert!((p.data()[0] - (4.0f64).atan2(3.0)).abs() < 1e-15);
    }

    #[test]
    fn stft_istft_stft_is_stable() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = noise(5000, 5);
        let mut spec = stft(&x, &cfg).unwrap();
        // perturb into a non-consistent spectrogram, then project
        spec.re.iter_mut().for_each(|v| *v *= rng.gen_range(0.5..1.5));
        let len = cfg.reconstructable_len(spec.frames);
        let once = stft(&istft(&spec, &cfg, len).unwrap(), &cfg).unwrap();
        let twice = stft(&istft(&once, &cfg, len).unwrap(), &cfg).unwrap();
        let diff = once
            .re
            .iter()
            .chain(&once.im)
            .zip(twice.re.iter().chain(&twice.im))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-6, "{diff}");
    }
}
