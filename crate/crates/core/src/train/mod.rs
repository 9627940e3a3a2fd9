//! Dynamic-mixing data pipeline, optimiser, schedule and training loop.

mod config;
mod data;
mod optim;
mod run;

pub use config::{Schedule, TrainConfig};
pub use data::{
    batch_loss, featurize, fixed_mixtures, make_batch, read_manifest, sample_mixture,
    sample_mixture_for, scan_wav_files, shuffled, tile_noise, sinusoid, synthetic_mixture, white_noise,
    AudioPool, Batch, Example, ItemMeta, Mixture, MAX_RESAMPLES,
};
pub use optim::{
    adam_step, clip_gradients, clip_tensor, learning_rate, warmup_branches, warmup_lr, AdamHyper, AdamState,
};
pub use run::{
    evaluate_loss, train_loop, train_step, write_log, DataSource, LogRecord, OutputDir, Split,
    TrainReport, LOG_HEADER,
};
