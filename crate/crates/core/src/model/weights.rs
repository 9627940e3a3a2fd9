//! Named parameter sets, initialisation and counting.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::numerics::{Gradients, Tape, Tensor, Var};
use crate::ssm::{init_a_log, init_dt_bias};
use crate::{Error, Result, Scalar};

pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 1e-1;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// How a parameter is filled by [`init_params`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
    ALog,
    DtBias,
}

/// One entry of the parameter layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn push_norm(specs: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    specs.push(ParamSpec::new(format!("{prefix}.weight"), &[d], Init::Ones));
    specs.push(ParamSpec::new(format!("{prefix}.bias"), &[d], Init::Zeros));
}

fn push_mamba(specs: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig) {
    let (dm, di, n, r, w) = (
        cfg.d_model,
        cfg.d_inner(),
        cfg.n_state,
        cfg.dt_rank(),
        cfg.inner_conv_width,
    );
    let p = |s: &str| format!("{prefix}.{s}");
    specs.push(ParamSpec::new(p("in_proj.weight"), &[dm, 2 * di], Init::Uniform { fan_in: dm }));
    specs.push(ParamSpec::new(p("conv1d.weight"), &[di, w], Init::Uniform { fan_in: w }));
    specs.push(ParamSpec::new(p("conv1d.bias"), &[di], Init::Uniform { fan_in: w }));
    specs.push(ParamSpec::new(p("x_proj.weight"), &[di, r + 2 * n], Init::Uniform { fan_in: di }));
    specs.push(ParamSpec::new(p("dt_proj.weight"), &[r, di], Init::Uniform { fan_in: r }));
    specs.push(ParamSpec::new(p("dt_proj.bias"), &[di], Init::DtBias));
    specs.push(ParamSpec::new(p("a_log"), &[di, n], Init::ALog));
    if cfg.learnable_skip {
        specs.push(ParamSpec::new(p("d_skip"), &[di], Init::Zeros));
    }
    push_norm(specs, &p("norm"), di);
    specs.push(ParamSpec::new(p("out_proj.weight"), &[di, dm], Init::Uniform { fan_in: di }));
}

/// Every parameter of the network in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (k, dm) = (cfg.bins, cfg.d_model);
    let mut specs = Vec::new();
    push_norm(&mut specs, "input.norm", k);
    specs.push(ParamSpec::new("input.conv.weight", &[k, dm], Init::Uniform { fan_in: k }));
    specs.push(ParamSpec::new("input.conv.bias", &[dm], Init::Uniform { fan_in: k }));
    for i in 0..cfg.n_layers {
        let prefix = format!("layers.{i}");
        push_norm(&mut specs, &format!("{prefix}.norm1"), dm);
        push_mamba(&mut specs, &format!("{prefix}.mamba"), cfg);
        if cfg.bidirectional {
            push_mamba(&mut specs, &format!("{prefix}.mamba_bwd"), cfg);
        }
        if cfg.has_outer_conv() {
            let kw = cfg.outer_dw_kernel;
            push_norm(&mut specs, &format!("{prefix}.norm2"), dm);
            specs.push(ParamSpec::new(
                format!("{prefix}.dwconv.weight"),
                &[dm, kw],
                Init::Uniform { fan_in: kw },
            ));
            specs.push(ParamSpec::new(
                format!("{prefix}.dwconv.bias"),
                &[dm],
                Init::Uniform { fan_in: kw },
            ));
        }
    }
    specs.push(ParamSpec::new("output.conv.weight", &[dm, k], Init::Uniform { fan_in: dm }));
    specs.push(ParamSpec::new("output.conv.bias", &[k], Init::Uniform { fan_in: dm }));
    specs
}

/// Exact number of scalar parameters.
pub fn count_params(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(ParamSpec::numel).sum()
}

/// The full named parameter set of a network, in layout order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct NetworkWeights<T> {
    params: IndexMap<String, Parameter<T>>,
}

impl<T: Scalar> NetworkWeights<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    /// Adds a parameter; names must be unique and values finite.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::NonFinite("parameter"));
        }
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.params.insert(
            name.clone(),
            Parameter {
                name,
                value,
                grad: None,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|p| p.value.is_finite())
    }

    /// Checks names and shapes against the layout of `cfg`, reporting the
    /// first offending parameter.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        for spec in &specs {
            let value = self.params.get(&spec.name).ok_or_else(|| {
                Error::Checkpoint(format!("parameter {} missing", spec.name))
            })?;
            if value.value.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, config expects {:?}",
                    spec.name,
                    value.value.shape(),
                    spec.shape
                )));
            }
        }
        if let Some(extra) = self
            .names()
            .find(|n| !specs.iter().any(|s| s.name == *n))
        {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    /// Records every parameter on `tape`.
    pub fn bind(&self, tape: &Tape<T>, requires_grad: bool) -> Result<BoundWeights> {
        let mut vars = IndexMap::with_capacity(self.len());
        for p in self.iter() {
            vars.insert(p.name.clone(), tape.leaf(p.value.clone(), requires_grad)?);
        }
        Ok(BoundWeights { vars })
    }

    /// Moves the gradients of a bound set into the `grad` buffers. Parameters
    /// the loss does not reach get a zero gradient.
    pub fn store_grads(&mut self, bound: &BoundWeights, grads: &mut Gradients<T>) -> Result<()> {
        for p in self.params.values_mut() {
            let var = bound.var(&p.name)?;
            p.grad = Some(
                grads
                    .take(var)
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape())),
            );
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Parameter {
                            name: p.name.clone(),
                            value: p.value.cast(),
                            grad: p.grad.as_ref().map(Tensor::cast),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Tape handles of a [`NetworkWeights`], by name.
#[derive(Clone, Debug)]
pub struct BoundWeights {
    vars: IndexMap<String, Var>,
}

impl BoundWeights {
    /// Pairs `names` with already-recorded handles, e.g. the inputs of a
    /// gradient check.
    pub fn from_vars<'a>(names: impl IntoIterator<Item = &'a str>, vars: &[Var]) -> Result<Self> {
        let names: Vec<&str> = names.into_iter().collect();
        if names.len() != vars.len() {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} handles",
                names.len(),
                vars.len()
            )));
        }
        Ok(Self {
            vars: names.into_iter().map(str::to_string).zip(vars.iter().copied()).collect(),
        })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

fn fill<T: Scalar, R: Rng>(spec: &ParamSpec, rng: &mut R) -> Tensor<T> {
    match spec.init {
        Init::Uniform { fan_in } => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(&spec.shape, |_| T::lit(rng.gen_range(-bound..=bound)))
        }
        Init::Ones => Tensor::ones(&spec.shape),
        Init::Zeros => Tensor::zeros(&spec.shape),
        Init::ALog => init_a_log(spec.shape[0], spec.shape[1]),
        Init::DtBias => init_dt_bias(spec.shape[0], DT_MIN, DT_MAX, rng),
    }
}

/// Deterministic initialisation from `seed`.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<NetworkWeights<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = NetworkWeights::new();
    for spec in param_specs(cfg) {
        let value = fill(&spec, &mut rng);
        w.insert(spec.name, value)?;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 2,
            n_state: 4,
            bins: 17,
            ..ModelConfig::mambadc(2)
        }
    }

    #[test]
    fn count_matches_materialised_weights() {
        for cfg in [tiny(), ModelConfig { bidirectional: true, learnable_skip: true, ..tiny() }] {
            let w = init_params::<f64>(&cfg, 1).unwrap();
            assert_eq!(w.num_scalars(), count_params(&cfg));
            w.check_layout(&cfg).unwrap();
        }
    }

    #[test]
    fn seeds() {
        let a = init_params::<f32>(&tiny(), 5).unwrap();
        let b = init_params::<f32>(&tiny(), 5).unwrap();
        let c = init_params::<f32>(&tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut w = NetworkWeights::<f64>::new();
        w.insert("x", Tensor::zeros(&[1])).unwrap();
        assert!(w.insert("x", Tensor::zeros(&[1])).is_err());
    }
}
