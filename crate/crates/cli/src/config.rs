//! Flat `key = value` run configuration with dotted keys.
//!
//! ```text
//! # comment
//! model.preset = mambadc-4
//! model.d_model = 32
//! train.seed = 7
//! data.clean = data/clean
//! ```
//!
//! Relative paths in a file resolve against the file's directory; paths given
//! with `--set` resolve against the working directory. `model.preset` is
//! applied before any other `model.*` key regardless of position.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mambadc::dsp::StftConfig;
use mambadc::model::ModelConfig;
use mambadc::train::TrainConfig;

use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EvalMode {
    /// Mask from the trained network.
    #[default]
    Model,
    /// Ideal ratio mask computed from the clean and noise signals.
    Oracle,
    /// The unprocessed mixture.
    Passthrough,
}

impl FromStr for EvalMode {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "model" => Ok(EvalMode::Model),
            "oracle" => Ok(EvalMode::Oracle),
            "passthrough" => Ok(EvalMode::Passthrough),
            other => Err(CliError::Usage(format!("unknown eval mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub clean: Option<PathBuf>,
    pub noise: Option<PathBuf>,
    pub clean_manifest: Option<PathBuf>,
    pub noise_manifest: Option<PathBuf>,
    /// Train on one generated sinusoid-plus-white-noise mixture instead of
    /// data roots.
    pub synthetic: bool,
    pub synthetic_freq_hz: f64,
    pub synthetic_seconds: f64,
    pub synthetic_snr_db: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clean: None,
            noise: None,
            clean_manifest: None,
            noise_manifest: None,
            synthetic: false,
            synthetic_freq_hz: 440.0,
            synthetic_seconds: 1.0,
            synthetic_snr_db: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub snrs_db: Vec<f64>,
    pub mode: EvalMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snrs_db: vec![-5.0, 0.0, 5.0],
            mode: EvalMode::Model,
        }
    }
}

/// Everything a command needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stft: StftConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            stft: StftConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("runs/latest"),
        }
    }
}

/// One `key = value` entry and the directory its relative paths resolve
/// against.
#[derive(Clone, Debug)]
struct Entry {
    key: String,
    value: String,
    base: PathBuf,
    origin: String,
}

fn parse_line(line: &str, origin: String, base: &Path) -> CliResult<Option<Entry>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let (key, value) = line
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("{origin}: expected key = value, got {line:?}")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Usage(format!("{origin}: empty key")));
    }
    Ok(Some(Entry {
        key: key.to_string(),
        value: value.trim().to_string(),
        base: base.to_path_buf(),
        origin,
    }))
}

fn parse<V: FromStr>(e: &Entry) -> CliResult<V> {
    e.value
        .parse()
        .map_err(|_| CliError::Usage(format!("{}: {}: cannot parse {:?}", e.origin, e.key, e.value)))
}

fn path(e: &Entry) -> PathBuf {
    let p = PathBuf::from(&e.value);
    if p.is_absolute() {
        p
    } else {
        e.base.join(p)
    }
}

fn opt_path(e: &Entry) -> Option<PathBuf> {
    (!e.value.is_empty() && e.value != "none").then(|| path(e))
}

fn unknown(e: &Entry) -> CliError {
    CliError::Usage(format!("unknown config key: {}", e.key))
}

impl RunConfig {
    /// Defaults, then the file (if any), then `--set` overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut entries = Vec::new();
        if let Some(file) = file {
            let text = fs::read_to_string(file)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", file.display())))?;
            let base = file.parent().unwrap_or(Path::new(".")).to_path_buf();
            for (i, line) in text.lines().enumerate() {
                let origin = format!("{}:{}", file.display(), i + 1);
                entries.extend(parse_line(line, origin, &base)?);
            }
        }
        for o in overrides {
            let origin = format!("--set {o}");
            match parse_line(o, origin.clone(), Path::new(""))? {
                Some(e) => entries.push(e),
                None => return Err(CliError::Usage(format!("{origin}: expected key=value"))),
            }
        }
        Self::from_entries(&entries)
    }

    /// Parses config text as if read from a file in `base`.
    pub fn from_text(text: &str, base: &Path) -> CliResult<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            entries.extend(parse_line(line, format!("line {}", i + 1), base)?);
        }
        Self::from_entries(&entries)
    }

    fn from_entries(entries: &[Entry]) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(e) = entries.iter().rev().find(|e| e.key == "model.preset") {
            cfg.model = ModelConfig::preset(&e.value)
                .map_err(|err| CliError::Usage(format!("{}: {err}", e.origin)))?;
        }
        for e in entries.iter().filter(|e| e.key != "model.preset") {
            cfg.apply(e)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, e: &Entry) -> CliResult<()> {
        let (section, field) = e.key.split_once('.').ok_or_else(|| unknown(e))?;
        let core = |r: mambadc::Result<()>| {
            r.map_err(|err| CliError::Usage(format!("{}: {err}", e.origin)))
        };
        match section {
            "model" if ModelConfig::KEYS.contains(&field) => core(self.model.set(field, &e.value))?,
            "train" if TrainConfig::KEYS.contains(&field) => core(self.train.set(field, &e.value))?,
            "stft" => match field {
                "win_length" => self.stft.win_length = parse(e)?,
                "hop" => self.stft.hop = parse(e)?,
                "fft_size" => self.stft.fft_size = parse(e)?,
                _ => return Err(unknown(e)),
            },
            "data" => match field {
                "clean" => self.data.clean = opt_path(e),
                "noise" => self.data.noise = opt_path(e),
                "clean_manifest" => self.data.clean_manifest = opt_path(e),
                "noise_manifest" => self.data.noise_manifest = opt_path(e),
                "synthetic" => self.data.synthetic = parse(e)?,
                "synthetic_freq_hz" => self.data.synthetic_freq_hz = parse(e)?,
                "synthetic_seconds" => self.data.synthetic_seconds = parse(e)?,
                "synthetic_snr_db" => self.data.synthetic_snr_db = parse(e)?,
                _ => return Err(unknown(e)),
            },
            "eval" => match field {
                "snrs" => {
                    self.eval.snrs_db = e
                        .value
                        .split(',')
                        .map(|s| {
                            s.trim().parse().map_err(|_| {
                                CliError::Usage(format!("{}: eval.snrs: cannot parse {s:?}", e.origin))
                            })
                        })
                        .collect::<CliResult<_>>()?
                }
                "mode" => self.eval.mode = e.value.parse()?,
                _ => return Err(unknown(e)),
            },
            "output" if field == "dir" => self.output_dir = path(e),
            _ => return Err(unknown(e)),
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |r: mambadc::Result<()>| r.map_err(|e| CliError::Usage(e.to_string()));
        usage(self.model.validate())?;
        usage(self.train.validate())?;
        usage(self.stft.validate())?;
        if self.model.bins != self.stft.bins() {
            return Err(CliError::Usage(format!(
                "model.bins = {} but the STFT yields {} bins",
                self.model.bins,
                self.stft.bins()
            )));
        }
        if self.data.synthetic && !(self.data.synthetic_seconds > 0.0) {
            return Err(CliError::Usage("data.synthetic_seconds must be > 0".into()));
        }
        if self.eval.snrs_db.is_empty() {
            return Err(CliError::Usage("eval.snrs is empty".into()));
        }
        Ok(())
    }
}
