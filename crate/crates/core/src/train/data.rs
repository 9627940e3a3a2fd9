//! Dynamic mixing, feature extraction and batching.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainConfig;
use crate::dsp::{load_wav, magnitude, mix_at_snr_with_offset, stft, StftConfig, Waveform, SAMPLE_RATE};
use crate::masks::{target_mask, MaskKind};
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Degenerate draws are retried this many times before giving up.
pub const MAX_RESAMPLES: usize = 10;

/// WAV files under `root`, recursively, sorted by path.
pub fn scan_wav_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        let is_wav = entry
            .path()
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if entry.file_type().is_file() && is_wav {
            out.push(entry.into_path());
        }
    }
    out.sort();
    Ok(out)
}

/// Paths listed one per line; relative entries resolve against `root`.
/// Blank lines and `#` comments are skipped.
pub fn read_manifest(manifest: &Path, root: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = Path::new(l);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            }
        })
        .collect())
}

/// In-memory set of recordings.
#[derive(Clone, Debug, Default)]
pub struct AudioPool<T> {
    pub paths: Vec<PathBuf>,
    pub waves: Vec<Waveform<T>>,
}

impl<T: Scalar> AudioPool<T> {
    pub fn from_waves(waves: Vec<Waveform<T>>) -> Self {
        let paths = (0..waves.len())
            .map(|i| PathBuf::from(format!("<memory:{i}>")))
            .collect();
        Self { paths, waves }
    }

    pub fn load(paths: Vec<PathBuf>) -> Result<Self> {
        let waves = paths.iter().map(load_wav).collect::<Result<Vec<_>>>()?;
        Ok(Self { paths, waves })
    }

    /// Every WAV under `root`, or those named by `manifest`.
    pub fn from_root(root: &Path, manifest: Option<&Path>) -> Result<Self> {
        let paths = match manifest {
            Some(m) => read_manifest(m, root)?,
            None => scan_wav_files(root)?,
        };
        Self::load(paths)
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemMeta {
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub snr_db: i32,
    pub noise_offset: usize,
    pub samples: usize,
    pub frames: usize,
}

/// One dynamically mixed utterance.
#[derive(Clone, Debug)]
pub struct Mixture<T> {
    pub clean: Waveform<T>,
    /// Scaled noise actually added.
    pub noise: Waveform<T>,
    pub noisy: Waveform<T>,
    pub meta: ItemMeta,
}

/// `noise` repeated until it has at least `len` samples.
pub fn tile_noise<T: Scalar>(noise: &Waveform<T>, len: usize) -> Waveform<T> {
    let mut samples = noise.samples.clone();
    while samples.len() < len {
        let take = (len - samples.len()).min(noise.len());
        samples.extend_from_slice(&noise.samples[..take]);
    }
    Waveform {
        samples,
        sample_rate: noise.sample_rate,
    }
}

/// Clean utterance `clean_index` mixed with a random noise segment at a
/// random integer SNR. Silent draws are re-sampled.
pub fn sample_mixture_for<T: Scalar, R: Rng + ?Sized>(
    clean_pool: &AudioPool<T>,
    clean_index: usize,
    noise_pool: &AudioPool<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Mixture<T>> {
    if clean_pool.is_empty() {
        return Err(Error::InvalidArgument("clean pool is empty".into()));
    }
    if noise_pool.is_empty() {
        return Err(Error::InvalidArgument("noise pool is empty".into()));
    }
    let mut clean_index = clean_index;
    let mut last = None;
    for _ in 0..=MAX_RESAMPLES {
        let mut clean = clean_pool.waves[clean_index].clone();
        if cfg.max_samples > 0 && clean.len() > cfg.max_samples {
            let start = rng.gen_range(0..=clean.len() - cfg.max_samples);
            clean.samples = clean.samples[start..start + cfg.max_samples].to_vec();
        }
        let noise_index = rng.gen_range(0..noise_pool.len());
        let noise = tile_noise(&noise_pool.waves[noise_index], clean.len());
        let snr_db = rng.gen_range(cfg.snr_min_db..=cfg.snr_max_db);
        let offset = rng.gen_range(0..=noise.len() - clean.len());
        match mix_at_snr_with_offset(&clean, &noise, snr_db as f64, offset) {
            Ok((noisy, noise)) => {
                let samples = clean.len();
                return Ok(Mixture {
                    meta: ItemMeta {
                        clean_path: clean_pool.paths[clean_index].clone(),
                        noise_path: noise_pool.paths[noise_index].clone(),
                        snr_db,
                        noise_offset: offset,
                        samples,
                        frames: 0,
                    },
                    clean,
                    noise,
                    noisy,
                });
            }
            Err(e @ Error::Degenerate(_)) => {
                last = Some(e);
                clean_index = rng.gen_range(0..clean_pool.len());
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Degenerate(format!(
        "no usable mixture after {MAX_RESAMPLES} re-samples: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Random clean utterance, noise recording, offset and SNR.
pub fn sample_mixture<T: Scalar, R: Rng + ?Sized>(
    clean_pool: &AudioPool<T>,
    noise_pool: &AudioPool<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Mixture<T>> {
    if clean_pool.is_empty() {
        return Err(Error::InvalidArgument("clean pool is empty".into()));
    }
    let i = rng.gen_range(0..clean_pool.len());
    sample_mixture_for(clean_pool, i, noise_pool, cfg, rng)
}

/// Network input and training target of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    /// `L × K` noisy magnitude.
    pub noisy_mag: Tensor<T>,
    /// `L × K` target mask.
    pub target: Tensor<T>,
    pub meta: ItemMeta,
}

impl<T: Scalar> Example<T> {
    pub fn frames(&self) -> usize {
        self.noisy_mag.shape()[0]
    }
}

pub fn featurize<T: Scalar>(m: &Mixture<T>, stft_cfg: &StftConfig, kind: MaskKind) -> Result<Example<T>> {
    let clean = stft(&m.clean, stft_cfg)?;
    let noise = stft(&m.noise, stft_cfg)?;
    let noisy = stft(&m.noisy, stft_cfg)?;
    let target = target_mask(kind, &clean, &noise, &noisy)?.values;
    let noisy_mag = magnitude(&noisy);
    let meta = ItemMeta {
        frames: noisy.frames,
        ..m.meta.clone()
    };
    Ok(Example {
        noisy_mag,
        target,
        meta,
    })
}

/// Zero-padded batch of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `B × L_max × K`.
    pub noisy_mag: Tensor<T>,
    /// `B × L_max × K`.
    pub target_mask: Tensor<T>,
    /// `B × L_max`, row-major.
    pub frame_valid: Vec<bool>,
    pub lengths: Vec<usize>,
    pub meta: Vec<ItemMeta>,
}

pub fn make_batch<T: Scalar>(items: &[Example<T>]) -> Result<Batch<T>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let bins = first.noisy_mag.shape()[1];
    let l_max = items.iter().map(Example::frames).max().unwrap_or(0);
    let b = items.len();
    let mut mag = vec![T::zero(); b * l_max * bins];
    let mut tgt = vec![T::zero(); b * l_max * bins];
    let mut valid = vec![false; b * l_max];
    for (i, ex) in items.iter().enumerate() {
        if ex.noisy_mag.shape() != [ex.frames(), bins] || ex.target.shape() != ex.noisy_mag.shape() {
            return Err(Error::shape(
                "make_batch",
                format!("item {i}: {:?} / {:?}", ex.noisy_mag.shape(), ex.target.shape()),
            ));
        }
        let base = i * l_max * bins;
        let n = ex.frames() * bins;
        mag[base..base + n].copy_from_slice(ex.noisy_mag.data());
        tgt[base..base + n].copy_from_slice(ex.target.data());
        valid[i * l_max..i * l_max + ex.frames()].fill(true);
    }
    Ok(Batch {
        noisy_mag: Tensor::new(vec![b, l_max, bins], mag)?,
        target_mask: Tensor::new(vec![b, l_max, bins], tgt)?,
        frame_valid: valid,
        lengths: items.iter().map(Example::frames).collect(),
        meta: items.iter().map(|e| e.meta.clone()).collect(),
    })
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.noisy_mag.shape()[1]
    }

    /// Valid (unpadded) input and target of item `i`.
    pub fn item(&self, i: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let (l_max, bins) = (self.max_frames(), self.noisy_mag.shape()[2]);
        let len = self.lengths[i];
        let range = i * l_max * bins..(i * l_max + len) * bins;
        Ok((
            Tensor::from_vec2(len, bins, self.noisy_mag.data()[range.clone()].to_vec())?,
            Tensor::from_vec2(len, bins, self.target_mask.data()[range].to_vec())?,
        ))
    }
}

/// Mean over items of the per-item mask MSE. Each item runs on its own
/// valid frames, so padding never reaches the network.
pub fn batch_loss<T: Scalar>(
    tape: &Tape<T>,
    batch: &Batch<T>,
    mut per_item: impl FnMut(Var) -> Result<Var>,
) -> Result<Var> {
    let mut losses = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let (input, target) = batch.item(i)?;
        let valid = vec![true; input.shape()[0]];
        let x = tape.constant(input)?;
        let mask = per_item(x)?;
        losses.push(tape.masked_mse(mask, &target, &valid)?);
    }
    tape.mean_of(&losses)
}

/// `amp · sin(2π f t)` for `samples` samples at the pipeline rate.
pub fn sinusoid<T: Scalar>(freq_hz: f64, amp: f64, samples: usize) -> Result<Waveform<T>> {
    let w = 2.0 * std::f64::consts::PI * freq_hz / SAMPLE_RATE as f64;
    Waveform::new(
        (0..samples).map(|n| T::lit(amp * (w * n as f64).sin())).collect(),
        SAMPLE_RATE,
    )
}

/// Gaussian white noise with standard deviation `std`.
pub fn white_noise<T: Scalar, R: Rng + ?Sized>(std: f64, samples: usize, rng: &mut R) -> Result<Waveform<T>> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::InvalidArgument(format!("white noise: {e}")))?;
    Waveform::new(
        (0..samples).map(|_| T::lit(normal.sample(rng))).collect(),
        SAMPLE_RATE,
    )
}

/// Sinusoid plus white noise mixed at `snr_db`.
pub fn synthetic_mixture<T: Scalar, R: Rng + ?Sized>(
    freq_hz: f64,
    samples: usize,
    snr_db: f64,
    rng: &mut R,
) -> Result<Mixture<T>> {
    let clean = sinusoid(freq_hz, 0.5, samples)?;
    let noise = white_noise(0.1, samples, rng)?;
    let (noisy, noise) = mix_at_snr_with_offset(&clean, &noise, snr_db, 0)?;
    Ok(Mixture {
        meta: ItemMeta {
            clean_path: PathBuf::from(format!("<sine:{freq_hz}Hz>")),
            noise_path: PathBuf::from("<white>"),
            snr_db: snr_db.round() as i32,
            noise_offset: 0,
            samples,
            frames: 0,
        },
        clean,
        noise,
        noisy,
    })
}

/// Fixed validation set: `n` mixtures drawn once from `seed`.
pub fn fixed_mixtures<T: Scalar, R: Rng + ?Sized>(
    clean_pool: &AudioPool<T>,
    noise_pool: &AudioPool<T>,
    cfg: &TrainConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Mixture<T>>> {
    (0..n)
        .map(|_| sample_mixture(clean_pool, noise_pool, cfg, rng))
        .collect()
}

/// A shuffled order of `0..n`.
pub fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}
