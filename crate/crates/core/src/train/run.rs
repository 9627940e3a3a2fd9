//! The training loop: a producer thread prepares batches while the consumer
//! runs forward, backward, clipping and Adam.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{batch_loss, featurize, make_batch, sample_mixture_for, shuffled, AudioPool, Batch, Example};
use super::optim::{adam_step, clip_gradients, learning_rate, AdamHyper, AdamState};
use super::TrainConfig;
use crate::dsp::StftConfig;
use crate::model::{init_params, network_mask, save_checkpoint, ModelConfig, NetworkWeights};
use crate::numerics::Tape;
use crate::{Error, Result, Scalar};

pub const LOG_HEADER: &str = "step,epoch,split,loss,lr";

/// Offset separating the data stream from the weight-initialisation seed.
const DATA_STREAM: u64 = 0x5eed_da7a;

/// Training material: either dynamic mixing from pools or a fixed list of
/// prepared examples.
#[derive(Clone, Debug)]
pub enum DataSource<T> {
    Pools {
        clean: AudioPool<T>,
        noise: AudioPool<T>,
    },
    Fixed(Vec<Example<T>>),
}

impl<T: Scalar> DataSource<T> {
    fn len(&self) -> usize {
        match self {
            DataSource::Pools { clean, .. } => clean.len(),
            DataSource::Fixed(items) => items.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
        })
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub lr: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{:e},{:e}",
            self.step, self.epoch, self.split, self.loss, self.lr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport<T> {
    pub weights: NetworkWeights<T>,
    pub log: Vec<LogRecord>,
    pub steps: u64,
    /// Loss of the last training batch.
    pub final_loss: f64,
    /// Epoch and loss of the lowest validation loss.
    pub best: Option<(usize, f64)>,
    pub reached_target: bool,
}

/// Where checkpoints and `metrics.csv` go.
#[derive(Clone, Debug)]
pub struct OutputDir {
    pub dir: PathBuf,
}

impl OutputDir {
    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn last_path(&self) -> PathBuf {
        self.dir.join("last.mdck")
    }

    pub fn best_path(&self) -> PathBuf {
        self.dir.join("best.mdck")
    }

    pub fn epoch_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:04}.mdck"))
    }
}

struct Logger {
    file: Option<(PathBuf, BufWriter<File>)>,
    records: Vec<LogRecord>,
}

impl Logger {
    fn new(path: Option<PathBuf>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?);
                writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(&p, e))?;
                Some((p, w))
            }
            None => None,
        };
        Ok(Self {
            file,
            records: Vec::new(),
        })
    }

    fn push(&mut self, r: LogRecord) -> Result<()> {
        if let Some((p, w)) = &mut self.file {
            writeln!(w, "{r}").map_err(|e| Error::io(p.as_path(), e))?;
        }
        self.records.push(r);
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<LogRecord>> {
        if let Some((p, w)) = &mut self.file {
            w.flush().map_err(|e| Error::io(p.as_path(), e))?;
        }
        Ok(self.records)
    }
}

type Item<T> = Result<(usize, Batch<T>)>;

/// Fills the queue with `(epoch, batch)` until the schedule ends or the
/// consumer hangs up.
fn produce<T: Scalar>(
    source: &DataSource<T>,
    cfg: &TrainConfig,
    stft_cfg: &StftConfig,
    steps_per_epoch: usize,
    tx: SyncSender<Item<T>>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DATA_STREAM);
    let n = source.len();
    for epoch in 1..=cfg.epochs {
        let order = shuffled(n, &mut rng);
        for k in 0..steps_per_epoch {
            let batch = (0..cfg.batch_size)
                .map(|j| {
                    let idx = order[(k * cfg.batch_size + j) % n];
                    match source {
                        DataSource::Fixed(items) => Ok(items[idx].clone()),
                        DataSource::Pools { clean, noise } => {
                            let m = sample_mixture_for(clean, idx, noise, cfg, &mut rng)?;
                            featurize(&m, stft_cfg, cfg.target)
                        }
                    }
                })
                .collect::<Result<Vec<_>>>()
                .and_then(|items| make_batch(&items));
            let failed = batch.is_err();
            if tx.send(batch.map(|b| (epoch, b))).is_err() || failed {
                return;
            }
        }
    }
}

/// Mean loss over `items` with no parameter updates.
pub fn evaluate_loss<T: Scalar>(
    w: &NetworkWeights<T>,
    cfg: &ModelConfig,
    items: &[Example<T>],
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    let batch = make_batch(items)?;
    let tape = Tape::new();
    let bound = w.bind(&tape, false)?;
    let loss = batch_loss(&tape, &batch, |x| network_mask(&tape, x, &bound, cfg))?;
    Ok(tape.value(loss).item().to_f64_lossy())
}

/// One optimisation step; returns the pre-update batch loss.
pub fn train_step<T: Scalar>(
    w: &mut NetworkWeights<T>,
    adam: &mut AdamState<T>,
    batch: &Batch<T>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let bound = w.bind(&tape, true)?;
    let loss = batch_loss(&tape, batch, |x| network_mask(&tape, x, &bound, model_cfg))?;
    let value = tape.value(loss).item().to_f64_lossy();
    let mut grads = tape.backward(loss)?;
    w.store_grads(&bound, &mut grads)?;
    clip_gradients(w, cfg.clip_lo, cfg.clip_hi)?;
    adam_step(w, adam, lr, AdamHyper::from(cfg))?;
    Ok(value)
}

/// Runs the configured number of epochs (or until `target_loss`).
pub fn train_loop<T: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    stft_cfg: &StftConfig,
    source: &DataSource<T>,
    valid: &[Example<T>],
    out: Option<&OutputDir>,
) -> Result<TrainReport<T>> {
    model_cfg.validate()?;
    cfg.validate()?;
    stft_cfg.validate()?;
    if source.len() == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if let Some(o) = out {
        fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
    }
    let steps_per_epoch = match cfg.steps_per_epoch {
        0 => source.len().div_ceil(cfg.batch_size),
        n => n,
    };

    let mut w = init_params::<T>(model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(&w);
    let mut logger = Logger::new(out.map(OutputDir::metrics_path))?;
    let mut best: Option<(usize, f64)> = None;
    let mut step = 0u64;
    let mut final_loss = f64::NAN;
    let mut lr = 0.0;
    let mut reached_target = false;

    thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel(cfg.queue_depth);
        scope.spawn(|| produce(source, cfg, stft_cfg, steps_per_epoch, tx));

        let mut current_epoch = 1;
        let mut end_epoch = |epoch: usize, w: &NetworkWeights<T>, step: u64, lr: f64, logger: &mut Logger| -> Result<()> {
            if !valid.is_empty() {
                let loss = evaluate_loss(w, model_cfg, valid)?;
                logger.push(LogRecord { step, epoch, split: Split::Valid, loss, lr })?;
                if best.map_or(true, |(_, b)| loss < b) {
                    best = Some((epoch, loss));
                    if let Some(o) = out {
                        save_checkpoint(o.best_path(), w, model_cfg)?;
                    }
                }
            }
            if let Some(o) = out {
                if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                    save_checkpoint(o.epoch_path(epoch), w, model_cfg)?;
                }
            }
            Ok(())
        };

        for item in rx.iter() {
            let (epoch, batch) = item?;
            if epoch != current_epoch {
                end_epoch(current_epoch, &w, step, lr, &mut logger)?;
                current_epoch = epoch;
            }
            step += 1;
            lr = learning_rate(cfg, step, model_cfg.d_model)?;
            let loss = train_step(&mut w, &mut adam, &batch, model_cfg, cfg, lr)?;
            final_loss = loss;
            logger.push(LogRecord { step, epoch, split: Split::Train, loss, lr })?;
            if cfg.target_loss.is_some_and(|t| loss < t) {
                reached_target = true;
                break;
            }
        }
        drop(rx);
        if step > 0 {
            end_epoch(current_epoch, &w, step, lr, &mut logger)?;
        }
        Ok(())
    })?;

    w.zero_grads();
    if let Some(o) = out {
        save_checkpoint(o.last_path(), &w, model_cfg)?;
    }
    Ok(TrainReport {
        weights: w,
        log: logger.finish()?,
        steps: step,
        final_loss,
        best,
        reached_target,
    })
}

/// Writes `records` as CSV with the standard header.
pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
