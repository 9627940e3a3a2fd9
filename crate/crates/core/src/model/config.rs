use std::fmt;
use std::str::FromStr;

use crate::ssm::ScanEvaluator;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    /// Output at `t` sees inputs `t−k+1 ..= t`.
    #[default]
    Causal,
    /// Symmetric window around `t`; odd widths only.
    Centered,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Causal => "causal",
            Padding::Centered => "centered",
        }
    }
}

impl FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Padding::Causal),
            "centered" => Ok(Padding::Centered),
            other => Err(Error::InvalidArgument(format!("unknown padding {other:?}"))),
        }
    }
}

/// Architecture hyper-parameters of the mask estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Number of stacked (Mamba)DC layers.
    pub n_layers: usize,
    pub n_state: usize,
    /// Width of the causal depthwise conv inside each Mamba layer.
    pub inner_conv_width: usize,
    /// `d_inner = expansion · d_model`.
    pub expansion: usize,
    /// Width of the depthwise conv sub-layer after each residual Mamba layer.
    /// Zero removes that sub-layer, giving a plain residual Mamba stack.
    pub outer_dw_kernel: usize,
    pub outer_dw_padding: Padding,
    /// STFT bins at the input and output.
    pub bins: usize,
    pub bidirectional: bool,
    /// Learnable direct feed-through `D` in each SSM.
    pub learnable_skip: bool,
    pub scan: ScanEvaluator,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::mambadc(4)
    }
}

impl ModelConfig {
    /// MambaDC-B with `d_model = 256`.
    pub fn mambadc(n_layers: usize) -> Self {
        Self {
            d_model: 256,
            n_layers,
            n_state: 16,
            inner_conv_width: 4,
            expansion: 2,
            outer_dw_kernel: 3,
            outer_dw_padding: Padding::Centered,
            bins: 257,
            bidirectional: false,
            learnable_skip: false,
            scan: ScanEvaluator::Sequential,
            ln_eps: 1e-5,
        }
    }

    /// Plain residual Mamba stack (no depthwise sub-layer).
    pub fn mamba(n_layers: usize) -> Self {
        Self {
            outer_dw_kernel: 0,
            ..Self::mambadc(n_layers)
        }
    }

    /// Named presets: `mamba-4`, `mamba-7`, `mambadc-4`, `mambadc-7`,
    /// `mambadc-13`, `bimambadc-4`.
    pub fn preset(name: &str) -> Result<Self> {
        let (family, layers) = name
            .rsplit_once('-')
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {name:?}")))?;
        let layers: usize = layers
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("unknown preset {name:?}")))?;
        match family {
            "mamba" => Ok(Self::mamba(layers)),
            "mambadc" => Ok(Self::mambadc(layers)),
            "bimambadc" => Ok(Self {
                bidirectional: true,
                ..Self::mambadc(layers)
            }),
            _ => Err(Error::InvalidArgument(format!("unknown preset {name:?}"))),
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expansion * self.d_model
    }

    /// `ceil(d_model / 16)`.
    pub fn dt_rank(&self) -> usize {
        self.d_model.div_ceil(16)
    }

    pub fn has_outer_conv(&self) -> bool {
        self.outer_dw_kernel > 0
    }

    /// True when no output frame depends on later input frames.
    pub fn is_causal(&self) -> bool {
        !self.bidirectional && (!self.has_outer_conv() || self.outer_dw_padding == Padding::Causal)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_state", self.n_state),
            ("inner_conv_width", self.inner_conv_width),
            ("expansion", self.expansion),
            ("bins", self.bins),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("model.{name} must be positive")));
            }
        }
        if self.has_outer_conv()
            && self.outer_dw_padding == Padding::Centered
            && self.outer_dw_kernel % 2 == 0
        {
            return Err(Error::InvalidArgument(
                "centered depthwise conv needs an odd kernel width".into(),
            ));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::InvalidArgument("model.ln_eps must be > 0".into()));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 12] = [
        "d_model",
        "n_layers",
        "n_state",
        "inner_conv_width",
        "expansion",
        "outer_dw_kernel",
        "outer_dw_padding",
        "bins",
        "bidirectional",
        "learnable_skip",
        "scan",
        "ln_eps",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("model.{key}: cannot parse {value:?}")))
        }
        match key {
            "d_model" => self.d_model = parse(key, value)?,
            "n_layers" => self.n_layers = parse(key, value)?,
            "n_state" => self.n_state = parse(key, value)?,
            "inner_conv_width" => self.inner_conv_width = parse(key, value)?,
            "expansion" => self.expansion = parse(key, value)?,
            "outer_dw_kernel" => self.outer_dw_kernel = parse(key, value)?,
            "outer_dw_padding" => self.outer_dw_padding = value.trim().parse()?,
            "bins" => self.bins = parse(key, value)?,
            "bidirectional" => self.bidirectional = parse(key, value)?,
            "learnable_skip" => self.learnable_skip = parse(key, value)?,
            "scan" => {
                self.scan = match value.trim() {
                    "sequential" => ScanEvaluator::Sequential,
                    "parallel" => ScanEvaluator::Parallel,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "model.scan: unknown evaluator {other:?}"
                        )))
                    }
                }
            }
            "ln_eps" => self.ln_eps = parse(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown key model.{other}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` text, in [`Self::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let values = [
            self.d_model.to_string(),
            self.n_layers.to_string(),
            self.n_state.to_string(),
            self.inner_conv_width.to_string(),
            self.expansion.to_string(),
            self.outer_dw_kernel.to_string(),
            self.outer_dw_padding.as_str().to_string(),
            self.bins.to_string(),
            self.bidirectional.to_string(),
            self.learnable_skip.to_string(),
            self.scan.name().to_string(),
            format!("{:e}", self.ln_eps),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d_model={} layers={} state={} d_inner={} outer_dw={} {}",
            self.d_model,
            self.n_layers,
            self.n_state,
            self.d_inner(),
            self.outer_dw_kernel,
            if self.bidirectional { "bidirectional" } else { "unidirectional" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let mut cfg = ModelConfig::preset("bimambadc-7").unwrap();
        cfg.ln_eps = 3.5e-6;
        cfg.scan = ScanEvaluator::Parallel;
        let pairs = cfg.to_pairs();
        let back =
            ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn derived_dims() {
        let cfg = ModelConfig::mambadc(4);
        assert_eq!(cfg.d_inner(), 512);
        assert_eq!(cfg.dt_rank(), 16);
        assert_eq!(ModelConfig { d_model: 8, ..cfg }.dt_rank(), 1);
    }

    #[test]
    fn rejects_even_centered_kernel() {
        let cfg = ModelConfig {
            outer_dw_kernel: 4,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_key() {
        assert!(ModelConfig::default().set("heads", "8").is_err());
        assert!(ModelConfig::preset("transformer-4").is_err());
    }
}
