//! `train`, `enhance` and `eval`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mambadc::dsp::{istft, load_wav, magnitude, mix_at_snr_with_offset, save_wav, stft, StftConfig, WavEncoding, Waveform};
use mambadc::masks::{apply_mask, target_mask, MaskKind};
use mambadc::metrics::{seg_snr, si_sdr, SegSnrConfig};
use mambadc::model::{forward, load_checkpoint, ModelConfig, NetworkWeights};
use mambadc::numerics::Tensor;
use mambadc::train::{
    featurize, fixed_mixtures, synthetic_mixture, tile_noise, train_loop, AudioPool, DataSource, Example,
    OutputDir,
};
use mambadc::{Error, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EvalMode, RunConfig};
use crate::{CliError, CliResult};

/// Seed offsets keeping the command streams apart from weight init.
const SYNTH_STREAM: u64 = 0x51_4e7e;
const VALID_STREAM: u64 = 0x7a11_d000;
const EVAL_STREAM: u64 = 0xe7a1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_loss: f64,
    pub best: Option<(usize, f64)>,
    pub reached_target: bool,
    pub output_dir: PathBuf,
}

fn existing_root(root: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    match root {
        Some(p) if p.is_dir() => Ok(p.clone()),
        Some(p) => Err(CliError::Usage(format!("{what} root not found: {}", p.display()))),
        None => Err(CliError::Usage(format!("{what} root not found: data.{what} is not set"))),
    }
}

fn load_pool<T: Scalar>(root: &Path, manifest: Option<&PathBuf>, what: &str) -> CliResult<AudioPool<T>> {
    let pool = AudioPool::from_root(root, manifest.map(PathBuf::as_path))?;
    if pool.is_empty() {
        return Err(CliError::Usage(format!("{what} root {} holds no WAV files", root.display())));
    }
    Ok(pool)
}

fn pools<T: Scalar>(cfg: &RunConfig) -> CliResult<(AudioPool<T>, AudioPool<T>)> {
    let clean_root = existing_root(cfg.data.clean.as_ref(), "clean")?;
    let noise_root = existing_root(cfg.data.noise.as_ref(), "noise")?;
    let clean = load_pool(&clean_root, cfg.data.clean_manifest.as_ref(), "clean")?;
    let noise = load_pool(&noise_root, cfg.data.noise_manifest.as_ref(), "noise")?;
    Ok((clean, noise))
}

/// The single fixed sinusoid-plus-white-noise example used by synthetic runs.
pub fn synthetic_example<T: Scalar>(cfg: &RunConfig) -> CliResult<Example<T>> {
    let d = &cfg.data;
    let samples = (d.synthetic_seconds * mambadc::dsp::SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ SYNTH_STREAM);
    let m = synthetic_mixture::<T, _>(d.synthetic_freq_hz, samples, d.synthetic_snr_db, &mut rng)?;
    Ok(featurize(&m, &cfg.stft, cfg.train.target)?)
}

pub fn cmd_train<T: Scalar>(cfg: &RunConfig) -> CliResult<TrainSummary> {
    let (source, valid) = if cfg.data.synthetic {
        let ex = synthetic_example::<T>(cfg)?;
        let valid = if cfg.train.valid_items > 0 { vec![ex.clone()] } else { Vec::new() };
        (DataSource::Fixed(vec![ex]), valid)
    } else {
        let (clean, noise) = pools::<T>(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ VALID_STREAM);
        let valid = fixed_mixtures(&clean, &noise, &cfg.train, cfg.train.valid_items, &mut rng)?
            .iter()
            .map(|m| featurize(m, &cfg.stft, cfg.train.target))
            .collect::<mambadc::Result<Vec<_>>>()?;
        (DataSource::Pools { clean, noise }, valid)
    };
    let out = OutputDir {
        dir: cfg.output_dir.clone(),
    };
    let report = train_loop(&cfg.model, &cfg.train, &cfg.stft, &source, &valid, Some(&out))?;
    Ok(TrainSummary {
        steps: report.steps,
        final_loss: report.final_loss,
        best: report.best,
        reached_target: report.reached_target,
        output_dir: out.dir,
    })
}

/// Loads a checkpoint and checks that it fits the STFT in use.
pub fn load_model<T: Scalar>(path: &Path, stft_cfg: &StftConfig) -> CliResult<(NetworkWeights<T>, ModelConfig)> {
    let (w, cfg) = load_checkpoint::<T>(path)?;
    if cfg.bins != stft_cfg.bins() {
        return Err(CliError::Core(Error::Checkpoint(format!(
            "{}: model expects {} bins, STFT yields {}",
            path.display(),
            cfg.bins,
            stft_cfg.bins()
        ))));
    }
    Ok((w, cfg))
}

/// STFT → mask → noisy-phase iSTFT, trimmed to the input length.
pub fn enhance_waveform<T: Scalar>(
    noisy: &Waveform<T>,
    w: &NetworkWeights<T>,
    model_cfg: &ModelConfig,
    stft_cfg: &StftConfig,
) -> CliResult<Waveform<T>> {
    let spec = stft(noisy, stft_cfg)?;
    let mask = forward(&magnitude(&spec), w, model_cfg)?;
    resynthesize(&spec, &mask, stft_cfg, noisy)
}

fn resynthesize<T: Scalar>(
    spec: &mambadc::dsp::Spectrogram<T>,
    mask: &Tensor<T>,
    stft_cfg: &StftConfig,
    like: &Waveform<T>,
) -> CliResult<Waveform<T>> {
    let est = apply_mask(spec, mask)?;
    Ok(istft(&est, stft_cfg, like.len())?)
}

pub fn cmd_enhance<T: Scalar>(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    stft_cfg: &StftConfig,
    encoding: WavEncoding,
) -> CliResult<()> {
    let (w, model_cfg) = load_model::<T>(checkpoint, stft_cfg)?;
    let noisy = load_wav::<T>(input)?;
    let out = enhance_waveform(&noisy, &w, &model_cfg, stft_cfg)?;
    save_wav(output, &out, encoding)?;
    Ok(())
}

/// Per-item evaluation result.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub clean: String,
    pub noise: String,
    pub snr_db: f64,
    pub si_sdr_in_db: f64,
    pub si_sdr_db: f64,
    pub seg_snr_db: f64,
    pub mask_mse: f64,
}

impl EvalRow {
    pub fn si_sdr_gain_db(&self) -> f64 {
        self.si_sdr_db - self.si_sdr_in_db
    }
}

pub const EVAL_HEADER: &str = "clean,noise,snr_db,si_sdr_in_db,si_sdr_db,si_sdr_gain_db,seg_snr_db,mask_mse";

fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).display().to_string()
}

/// Scores one mixture. Mask MSE is against the IRM target.
fn score<T: Scalar>(
    clean: &Waveform<T>,
    noise: &Waveform<T>,
    noisy: &Waveform<T>,
    mode: EvalMode,
    model: Option<&(NetworkWeights<T>, ModelConfig)>,
    stft_cfg: &StftConfig,
) -> CliResult<(f64, f64, f64, f64)> {
    let noisy_spec = stft(noisy, stft_cfg)?;
    let target = target_mask(MaskKind::Irm, &stft(clean, stft_cfg)?, &stft(noise, stft_cfg)?, &noisy_spec)?.values;
    let mask = match (mode, model) {
        (EvalMode::Oracle, _) => target.clone(),
        (EvalMode::Passthrough, _) => Tensor::ones(target.shape()),
        (EvalMode::Model, Some((w, cfg))) => forward(&magnitude(&noisy_spec), w, cfg)?,
        (EvalMode::Model, None) => return Err(CliError::Usage("eval mode model needs --checkpoint".into())),
    };
    let est = match mode {
        EvalMode::Passthrough => noisy.clone(),
        _ => resynthesize(&noisy_spec, &mask, stft_cfg, noisy)?,
    };
    let mse = mask
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).powi(2))
        .sum::<f64>()
        / mask.numel() as f64;
    Ok((
        si_sdr(noisy, clean)?,
        si_sdr(&est, clean)?,
        seg_snr(&est, clean, &SegSnrConfig::default())?,
        mse,
    ))
}

/// Every clean utterance at every SNR, each with a seeded noise draw.
/// Mixtures are drawn sequentially so the report does not depend on thread
/// scheduling.
pub fn cmd_eval<T: Scalar>(cfg: &RunConfig, checkpoint: Option<&Path>) -> CliResult<Vec<EvalRow>> {
    let (clean_pool, noise_pool) = pools::<T>(cfg)?;
    let model = match (cfg.eval.mode, checkpoint) {
        (EvalMode::Model, Some(p)) => Some(load_model::<T>(p, &cfg.stft)?),
        (EvalMode::Model, None) => return Err(CliError::Usage("eval mode model needs --checkpoint".into())),
        _ => None,
    };
    let clean_root = cfg.data.clean.clone().unwrap_or_default();
    let noise_root = cfg.data.noise.clone().unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ EVAL_STREAM);
    let mut rows = Vec::new();
    for (ci, clean) in clean_pool.waves.iter().enumerate() {
        for &snr in &cfg.eval.snrs_db {
            let ni = rng.gen_range(0..noise_pool.len());
            let noise = tile_noise(&noise_pool.waves[ni], clean.len());
            let offset = rng.gen_range(0..=noise.len() - clean.len());
            let (noisy, scaled) = mix_at_snr_with_offset(clean, &noise, snr, offset)?;
            let (si_in, si_out, seg, mse) = score(clean, &scaled, &noisy, cfg.eval.mode, model.as_ref(), &cfg.stft)?;
            rows.push(EvalRow {
                clean: relative(&clean_pool.paths[ci], &clean_root),
                noise: relative(&noise_pool.paths[ni], &noise_root),
                snr_db: snr,
                si_sdr_in_db: si_in,
                si_sdr_db: si_out,
                seg_snr_db: seg,
                mask_mse: mse,
            });
        }
    }
    Ok(rows)
}

/// Per-item lines followed by a `mean` line.
pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = format!("{EVAL_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6e}",
            r.clean,
            r.noise,
            r.snr_db,
            r.si_sdr_in_db,
            r.si_sdr_db,
            r.si_sdr_gain_db(),
            r.seg_snr_db,
            r.mask_mse
        );
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "mean,,,{:.6},{:.6},{:.6},{:.6},{:.6e}",
            mean(|r| r.si_sdr_in_db),
            mean(|r| r.si_sdr_db),
            mean(EvalRow::si_sdr_gain_db),
            mean(|r| r.seg_snr_db),
            mean(|r| r.mask_mse)
        );
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(fs::write(path, text).map_err(|e| Error::io(path, e))?)
}
