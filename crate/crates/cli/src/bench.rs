//! Wall-time comparison of the scan evaluators.

use std::fmt::Write as _;
use std::time::Instant;

use mambadc::numerics::Tensor;
use mambadc::ssm::{selective_scan_parallel, selective_scan_seq, ScanEvaluator, SelectiveInputs, SsmParams};
use mambadc::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{CliError, CliResult};

pub const BENCH_HEADER: &str = "L,evaluator,mean_ms,max_abs_diff";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub len: usize,
    pub evaluator: ScanEvaluator,
    pub mean_ms: f64,
    /// Fastest single repeat; steadier than the mean on a busy machine.
    pub min_ms: f64,
    /// Against the sequential output at the same length.
    pub max_abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub d_inner: usize,
    pub n_state: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl BenchConfig {
    fn validate(&self) -> CliResult<()> {
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(CliError::Usage("bench-scan needs positive lengths".into()));
        }
        if self.d_inner == 0 || self.n_state == 0 || self.repeats == 0 {
            return Err(CliError::Usage("bench-scan needs d_inner, n_state and repeats > 0".into()));
        }
        Ok(())
    }
}

fn problem<T: Scalar>(len: usize, d: usize, n: usize, rng: &mut ChaCha8Rng) -> (Tensor<T>, SelectiveInputs<T>, SsmParams<T>) {
    let p = SsmParams::<T>::init(d, n, 1, rng);
    let mut rand = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| T::lit(rng.gen_range(lo..hi)));
    let u = rand(&[len, d], -1.0, 1.0);
    let si = SelectiveInputs {
        delta: rand(&[len, d], 1e-3, 1e-1),
        b: rand(&[len, n], -1.0, 1.0),
        c: rand(&[len, n], -1.0, 1.0),
    };
    (u, si, p)
}

/// Runs `f` once untimed, then `repeats` timed; returns (mean, min) in ms.
fn time<R>(repeats: usize, mut f: impl FnMut() -> R) -> (f64, f64) {
    std::hint::black_box(f());
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(f());
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / repeats as f64;
    (mean, times.iter().copied().fold(f64::INFINITY, f64::min))
}

/// One sequential and one parallel row per length.
pub fn bench_scan<T: Scalar>(cfg: &BenchConfig) -> CliResult<Vec<BenchRow>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(2 * cfg.lengths.len());
    for &len in &cfg.lengths {
        let (u, si, p) = problem::<T>(len, cfg.d_inner, cfg.n_state, &mut rng);
        let seq = selective_scan_seq(&u, &si, &p)?;
        let par = selective_scan_parallel(&u, &si, &p)?;
        let diff = seq.max_abs_diff(&par)?.to_f64_lossy();
        let (mean, min) = time(cfg.repeats, || selective_scan_seq(&u, &si, &p));
        rows.push(BenchRow {
            len,
            evaluator: ScanEvaluator::Sequential,
            mean_ms: mean,
            min_ms: min,
            max_abs_diff: 0.0,
        });
        let (mean, min) = time(cfg.repeats, || selective_scan_parallel(&u, &si, &p));
        rows.push(BenchRow {
            len,
            evaluator: ScanEvaluator::Parallel,
            mean_ms: mean,
            min_ms: min,
            max_abs_diff: diff,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.4},{:e}", r.len, r.evaluator.name(), r.mean_ms, r.max_abs_diff);
    }
    s
}
