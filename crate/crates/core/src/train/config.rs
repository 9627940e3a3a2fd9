use std::str::FromStr;

use crate::masks::MaskKind;
use crate::{Error, Result};

/// How the learning rate evolves with the step count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Schedule {
    /// `lr_scale · warmup_lr(step)`.
    #[default]
    Warmup,
    /// `lr_base` at every step.
    Constant,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Warmup => "warmup",
            Schedule::Constant => "constant",
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup" => Ok(Schedule::Warmup),
            "constant" => Ok(Schedule::Constant),
            other => Err(Error::InvalidArgument(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Optimiser, schedule, mixing and batching settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Inclusive integer SNR range in dB.
    pub snr_min_db: i32,
    pub snr_max_db: i32,
    pub target: MaskKind,
    pub schedule: Schedule,
    pub lr_base: f64,
    /// Multiplier on the warm-up schedule.
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: u64,
    pub epochs: usize,
    /// Batches per epoch; zero means one pass over the training pool.
    pub steps_per_epoch: usize,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub seed: u64,
    /// Size of the fixed validation set drawn from the pools.
    pub valid_items: usize,
    /// Clean utterances are cut to at most this many samples; zero keeps
    /// them whole.
    pub max_samples: usize,
    /// Stop once a training batch loss falls below this value.
    pub target_loss: Option<f64>,
    /// Write `epoch_NNNN.mdck` every this many epochs; zero disables.
    pub checkpoint_every: usize,
    /// Bound of the producer/consumer batch queue.
    pub queue_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            snr_min_db: -10,
            snr_max_db: 20,
            target: MaskKind::Irm,
            schedule: Schedule::Warmup,
            lr_base: 1e-3,
            lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 40_000,
            epochs: 150,
            steps_per_epoch: 0,
            clip_lo: -1.0,
            clip_hi: 1.0,
            seed: 0,
            valid_items: 20,
            max_samples: 0,
            target_loss: None,
            checkpoint_every: 1,
            queue_depth: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.batch_size == 0 {
            return bad("train.batch_size must be ≥ 1");
        }
        if self.warmup_steps == 0 {
            return bad("train.warmup_steps must be ≥ 1");
        }
        if !(self.clip_lo < self.clip_hi) {
            return bad("train.clip_lo must be < train.clip_hi");
        }
        if self.snr_min_db > self.snr_max_db {
            return bad("train.snr_min_db must be ≤ train.snr_max_db");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.lr_base > 0.0) || !(self.lr_scale > 0.0) {
            return bad("train.adam_eps, train.lr_base and train.lr_scale must be > 0");
        }
        if self.queue_depth == 0 {
            return bad("train.queue_depth must be ≥ 1");
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 21] = [
        "batch_size",
        "snr_min_db",
        "snr_max_db",
        "target",
        "schedule",
        "lr_base",
        "lr_scale",
        "beta1",
        "beta2",
        "adam_eps",
        "warmup_steps",
        "epochs",
        "steps_per_epoch",
        "clip_lo",
        "clip_hi",
        "seed",
        "valid_items",
        "max_samples",
        "target_loss",
        "checkpoint_every",
        "queue_depth",
    ];

    /// Sets one field from its textual form. `target_loss = none` clears it.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("train.{key}: cannot parse {value:?}")))
        }
        let v = value.trim();
        match key {
            "batch_size" => self.batch_size = parse(key, v)?,
            "snr_min_db" => self.snr_min_db = parse(key, v)?,
            "snr_max_db" => self.snr_max_db = parse(key, v)?,
            "target" => self.target = v.parse()?,
            "schedule" => self.schedule = v.parse()?,
            "lr_base" => self.lr_base = parse(key, v)?,
            "lr_scale" => self.lr_scale = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "warmup_steps" => self.warmup_steps = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, v)?,
            "clip_lo" => self.clip_lo = parse(key, v)?,
            "clip_hi" => self.clip_hi = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "valid_items" => self.valid_items = parse(key, v)?,
            "max_samples" => self.max_samples = parse(key, v)?,
            "target_loss" => {
                self.target_loss = match v {
                    "none" | "" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "queue_depth" => self.queue_depth = parse(key, v)?,
            other => return Err(Error::InvalidArgument(format!("unknown key train.{other}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_settable() {
        let mut cfg = TrainConfig::default();
        let values = [
            "4", "-5", "5", "psm", "constant", "0.01", "2", "0.8", "0.99", "1e-6", "10", "3",
            "7", "-0.5", "0.5", "42", "3", "16000", "1e-3", "0", "2",
        ];
        for (k, v) in TrainConfig::KEYS.iter().zip(values) {
            cfg.set(k, v).unwrap();
        }
        cfg.validate().unwrap();
        assert_eq!(cfg.target, MaskKind::Psm);
        assert_eq!(cfg.target_loss, Some(1e-3));
        assert!(cfg.set("momentum", "0.9").is_err());
    }

    #[test]
    fn validation() {
        let cfg = TrainConfig {
            clip_lo: 1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { warmup_steps: 0, ..TrainConfig::default() }.validate().is_err());
    }
}
