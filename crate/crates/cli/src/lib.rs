//! Command implementations behind the `mambadc` binary: training, file
//! enhancement, evaluation, scan benchmarks and the gradient suite.

mod bench;
mod commands;
mod config;
mod error;
mod gradcheck;

pub use bench::{bench_csv, bench_scan, BenchConfig, BenchRow, BENCH_HEADER};
pub use commands::{
    cmd_enhance, cmd_eval, cmd_train, enhance_waveform, eval_csv, load_model, synthetic_example,
    write_text, EvalRow, TrainSummary, EVAL_HEADER,
};
pub use config::{DataConfig, EvalConfig, EvalMode, RunConfig};
pub use error::{CliError, CliResult};
pub use gradcheck::{run_gradcheck, GradPreset, GradReport, GradRow, GRADCHECK_TOL};
