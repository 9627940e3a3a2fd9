//! Central-difference gradient suite over every differentiable op, each
//! layer type and the full network at tiny sizes (64-bit).

use std::fmt;

use mambadc::model::{
    init_params, mamba_layer, mambadc_layer, network_mask, BoundWeights, MambaDcLayerWeights,
    MambaLayerWeights, ModelConfig, Padding,
};
use mambadc::numerics::{gradient_pair, Activation, Tensor};
use mambadc::ssm::{selective_scan, ScanEvaluator, ScanVars};
use mambadc::train::{batch_loss, make_batch, Example, ItemMeta};
use mambadc::{Result, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{CliError, CliResult};

pub const GRADCHECK_TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

/// Which full-network variants the suite includes besides the op checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradPreset {
    /// Plain Mamba, MambaDC and BiMambaDC.
    #[default]
    All,
    Mamba,
    MambaDc,
    BiMambaDc,
}

impl std::str::FromStr for GradPreset {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "all" | "default" => Ok(GradPreset::All),
            "mamba" => Ok(GradPreset::Mamba),
            "mambadc" => Ok(GradPreset::MambaDc),
            "bimambadc" => Ok(GradPreset::BiMambaDc),
            other => Err(CliError::Usage(format!("unknown gradcheck preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub name: String,
    /// Max relative error per input, in argument order.
    pub per_input: Vec<(String, f64)>,
}

impl GradRow {
    pub fn max_error(&self) -> f64 {
        self.per_input.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < GRADCHECK_TOL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(GradRow::passed)
    }

    /// `op/input` for every input whose error reaches the tolerance.
    pub fn failures(&self) -> Vec<String> {
        self.rows
            .iter()
            .flat_map(|r| {
                r.per_input
                    .iter()
                    .filter(|(_, e)| !(*e < GRADCHECK_TOL))
                    .map(move |(p, e)| format!("{}/{p} ({e:.3e})", r.name))
            })
            .collect()
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "op,max_rel_error,status")?;
        for r in &self.rows {
            let status = if r.passed() { "ok" } else { "FAIL" };
            writeln!(f, "{},{:.3e},{status}", r.name, r.max_error())?;
        }
        Ok(())
    }
}

struct Suite {
    rng: ChaCha8Rng,
    rows: Vec<GradRow>,
    /// Name of the op whose analytic gradient gets its sign flipped.
    sabotage: Option<&'static str>,
}

impl Suite {
    fn rand(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    /// Values bounded away from zero, for ops with a kink there.
    fn rand_off_zero(&mut self, shape: &[usize]) -> Tensor<f64> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) { v } else { -v }
        })
    }

    fn check<F>(&mut self, name: &str, labels: &[&str], inputs: &[Tensor<f64>], f: F) -> Result<()>
    where
        F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
    {
        let mut pair = gradient_pair(f, inputs, STEP)?;
        if self.sabotage == Some(name) {
            for g in &mut pair.analytic {
                *g = g.map(|v| -v);
            }
        }
        let per_input = labels
            .iter()
            .map(|s| s.to_string())
            .zip(pair.per_input_errors())
            .collect();
        self.rows.push(GradRow {
            name: name.to_string(),
            per_input,
        });
        Ok(())
    }

    /// Weighted sum against a fixed random tensor so that every output
    /// coordinate contributes a distinct gradient.
    fn probe(&mut self, shape: &[usize]) -> Tensor<f64> {
        self.rand(shape, -1.0, 1.0)
    }
}

fn reduce(tape: &Tape<f64>, v: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone())?;
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn tiny(base: ModelConfig) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_state: 4,
        bins: 17,
        ..base
    }
}

fn op_checks(s: &mut Suite) -> Result<()> {
    let (a, b) = (s.rand(&[3, 4], -1.0, 1.0), s.rand(&[4, 5], -1.0, 1.0));
    let p = s.probe(&[3, 5]);
    s.check("matmul", &["a", "b"], &[a, b], |t, v| reduce(t, t.matmul(v[0], v[1])?, &p))?;

    let (x, y) = (s.rand(&[3, 4], -1.0, 1.0), s.rand(&[3, 4], -1.0, 1.0));
    let p = s.probe(&[3, 4]);
    s.check("add", &["a", "b"], &[x.clone(), y.clone()], |t, v| reduce(t, t.add(v[0], v[1])?, &p))?;
    s.check("sub", &["a", "b"], &[x.clone(), y.clone()], |t, v| reduce(t, t.sub(v[0], v[1])?, &p))?;
    s.check("mul", &["a", "b"], &[x.clone(), y.clone()], |t, v| reduce(t, t.mul(v[0], v[1])?, &p))?;
    s.check("scale", &["x"], &[x.clone()], |t, v| reduce(t, t.scale(v[0], -1.7)?, &p))?;
    let bias = s.rand(&[4], -1.0, 1.0);
    s.check("add_row", &["x", "bias"], &[x.clone(), bias], |t, v| {
        reduce(t, t.add_row(v[0], v[1])?, &p)
    })?;

    let kinked = s.rand_off_zero(&[3, 4]);
    for act in Activation::ALL {
        let name = format!("activation.{}", act.name());
        s.check(&name, &["x"], &[kinked.clone()], |t, v| reduce(t, t.activation(act, v[0])?, &p))?;
    }

    let (gamma, beta) = (s.rand(&[4], 0.5, 1.5), s.rand(&[4], -0.5, 0.5));
    s.check("layer_norm", &["x", "gamma", "beta"], &[x.clone(), gamma, beta], |t, v| {
        reduce(t, t.layer_norm(v[0], v[1], v[2], 1e-5)?, &p)
    })?;

    let p_cols = s.probe(&[3, 2]);
    s.check("slice_cols", &["x"], &[x.clone()], |t, v| reduce(t, t.slice_cols(v[0], 1, 3)?, &p_cols))?;
    s.check("reverse_rows", &["x"], &[x.clone()], |t, v| reduce(t, t.reverse_rows(v[0])?, &p))?;
    s.check("sum", &["x"], &[x.clone()], |t, v| {
        let sq = t.mul(v[0], v[0])?;
        t.sum(sq)
    })?;
    s.check("mean_of", &["a", "b"], &[x.clone(), y.clone()], |t, v| {
        let a = reduce(t, v[0], &p)?;
        let b = reduce(t, t.mul(v[1], v[1])?, &p)?;
        t.mean_of(&[a, b])
    })?;
    let target = s.rand(&[3, 4], 0.0, 1.0);
    s.check("masked_mse", &["pred"], &[x.clone()], |t, v| {
        t.masked_mse(v[0], &target, &[true, false, true])
    })?;

    for (name, pad) in [
        ("depthwise_conv1d.causal", Padding::Causal),
        ("depthwise_conv1d.centered", Padding::Centered),
    ] {
        let xs = s.rand(&[7, 3], -1.0, 1.0);
        let k = s.rand(&[3, 3], -1.0, 1.0);
        let b = s.rand(&[3], -1.0, 1.0);
        let p = s.probe(&[7, 3]);
        s.check(name, &["x", "kernel", "bias"], &[xs, k, b], |t, v| {
            reduce(t, t.depthwise_conv1d(v[0], v[1], v[2], pad)?, &p)
        })?;
    }

    // Long enough for the parallel evaluator to take its Blelloch path.
    let (len, d, n) = (40, 3, 2);
    let u = s.rand(&[len, d], -1.0, 1.0);
    let dt_raw = s.rand(&[len, d], -3.0, 0.0);
    let a_log = s.rand(&[d, n], -0.5, 0.5);
    let b = s.rand(&[len, n], -1.0, 1.0);
    let c = s.rand(&[len, n], -1.0, 1.0);
    let d_skip = s.rand(&[d], -1.0, 1.0);
    let p = s.probe(&[len, d]);
    for (name, ev) in [
        ("selective_scan.sequential", ScanEvaluator::Sequential),
        ("selective_scan.parallel", ScanEvaluator::Parallel),
    ] {
        let inputs = [u.clone(), dt_raw.clone(), a_log.clone(), b.clone(), c.clone(), d_skip.clone()];
        s.check(name, &["u", "delta", "a_log", "b", "c", "d_skip"], &inputs, |t, v| {
            let delta = t.softplus(v[1])?;
            let vars = ScanVars {
                u: v[0],
                delta,
                a_log: v[2],
                b: v[3],
                c: v[4],
                d_skip: Some(v[5]),
            };
            reduce(t, selective_scan(t, vars, ev)?, &p)
        })?;
    }
    Ok(())
}

/// Gradcheck of one layer 0 of `cfg`, with respect to the input and every
/// layer parameter.
fn layer_check(s: &mut Suite, name: &str, cfg: &ModelConfig, mamba_only: bool) -> Result<()> {
    let w = init_params::<f64>(cfg, s.rng.gen())?;
    let len = 6;
    let mut labels = vec!["input".to_string()];
    let mut inputs = vec![s.rand(&[len, cfg.d_model], -1.0, 1.0)];
    let prefix = if mamba_only { "layers.0.mamba." } else { "layers.0." };
    for p in w.iter().filter(|p| p.name.starts_with(prefix)) {
        labels.push(p.name.clone());
        inputs.push(perturbed(&p.value, &mut s.rng));
    }
    let probe = s.probe(&[len, cfg.d_model]);
    let names: Vec<String> = labels[1..].to_vec();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    s.check(name, &label_refs, &inputs, |t, v| {
        let bound = BoundWeights::from_vars(names.iter().map(String::as_str), &v[1..])?;
        let out = if mamba_only {
            let lw = MambaLayerWeights::bind(&bound, "layers.0.mamba")?;
            mamba_layer(t, v[0], &lw, cfg)?
        } else {
            let lw = MambaDcLayerWeights::bind(&bound, 0, cfg)?;
            mambadc_layer(t, v[0], &lw, cfg)?
        };
        reduce(t, out, &probe)
    })
}

/// Output projections start at exactly zero, which hides gradients flowing
/// through them; nudge every parameter off its initial value.
fn perturbed(t: &Tensor<f64>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(t.shape(), |i| t.data()[i] + rng.gen_range(-0.1..0.1))
}

/// Full mask estimator with a two-item padded batch and the masked MSE loss.
fn network_check(s: &mut Suite, name: &str, cfg: &ModelConfig) -> Result<()> {
    let w = init_params::<f64>(cfg, s.rng.gen())?;
    let examples: Vec<Example<f64>> = [6, 5]
        .into_iter()
        .map(|frames| Example {
            noisy_mag: s.rand(&[frames, cfg.bins], 0.0, 2.0),
            target: s.rand(&[frames, cfg.bins], 0.0, 1.0),
            meta: ItemMeta {
                clean_path: Default::default(),
                noise_path: Default::default(),
                snr_db: 0,
                noise_offset: 0,
                samples: 0,
                frames,
            },
        })
        .collect();
    let batch = make_batch(&examples)?;
    let names: Vec<String> = w.names().map(str::to_string).collect();
    let inputs: Vec<Tensor<f64>> = w.iter().map(|p| perturbed(&p.value, &mut s.rng)).collect();
    let labels: Vec<&str> = names.iter().map(String::as_str).collect();
    s.check(name, &labels, &inputs, |t, v| {
        let bound = BoundWeights::from_vars(names.iter().map(String::as_str), v)?;
        batch_loss(t, &batch, |x| network_mask(t, x, &bound, cfg))
    })
}

/// Runs the whole suite. `sabotage` flips the sign of one op's analytic
/// gradient, as a negative control that the suite can fail.
pub fn run_gradcheck(preset: GradPreset, seed: u64, sabotage: Option<&'static str>) -> CliResult<GradReport> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        rows: Vec::new(),
        sabotage,
    };
    op_checks(&mut s)?;

    let dc = tiny(ModelConfig::mambadc(2));
    let mamba = tiny(ModelConfig::mamba(2));
    let bi = ModelConfig {
        bidirectional: true,
        learnable_skip: true,
        ..dc.clone()
    };
    layer_check(&mut s, "layer.mamba", &dc, true)?;
    layer_check(&mut s, "layer.mambadc", &dc, false)?;
    layer_check(&mut s, "layer.bimambadc", &bi, false)?;
    let nets: Vec<(&str, &ModelConfig)> = match preset {
        GradPreset::All => vec![("network.mamba", &mamba), ("network.mambadc", &dc), ("network.bimambadc", &bi)],
        GradPreset::Mamba => vec![("network.mamba", &mamba)],
        GradPreset::MambaDc => vec![("network.mambadc", &dc)],
        GradPreset::BiMambaDc => vec![("network.bimambadc", &bi)],
    };
    for (name, cfg) in nets {
        network_check(&mut s, name, cfg)?;
    }
    Ok(GradReport { rows: s.rows })
}
