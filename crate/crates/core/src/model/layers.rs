//! Mamba and MambaDC layers and the full mask estimator.

use super::{BoundWeights, ModelConfig, NetworkWeights, Padding};
use crate::numerics::{Tape, Tensor, Var};
use crate::ssm::{selective_scan, ScanVars};
use crate::{Error, Result, Scalar};

/// Tape handles of one Mamba block.
#[derive(Clone, Copy, Debug)]
pub struct MambaLayerWeights {
    pub in_proj: Var,
    pub conv_weight: Var,
    pub conv_bias: Var,
    pub x_proj: Var,
    pub dt_proj_weight: Var,
    pub dt_proj_bias: Var,
    pub a_log: Var,
    pub d_skip: Option<Var>,
    pub norm_weight: Var,
    pub norm_bias: Var,
    pub out_proj: Var,
}

impl MambaLayerWeights {
    pub fn bind(w: &BoundWeights, prefix: &str) -> Result<Self> {
        let v = |s: &str| w.var(&format!("{prefix}.{s}"));
        Ok(Self {
            in_proj: v("in_proj.weight")?,
            conv_weight: v("conv1d.weight")?,
            conv_bias: v("conv1d.bias")?,
            x_proj: v("x_proj.weight")?,
            dt_proj_weight: v("dt_proj.weight")?,
            dt_proj_bias: v("dt_proj.bias")?,
            a_log: v("a_log")?,
            d_skip: w.opt(&format!("{prefix}.d_skip")),
            norm_weight: v("norm.weight")?,
            norm_bias: v("norm.bias")?,
            out_proj: v("out_proj.weight")?,
        })
    }
}

/// Depthwise sub-block following the residual Mamba block.
#[derive(Clone, Copy, Debug)]
pub struct DwConvWeights {
    pub norm_weight: Var,
    pub norm_bias: Var,
    pub kernel: Var,
    pub bias: Var,
}

/// Tape handles of one (Bi)MambaDC layer. `dwconv` is absent in the plain
/// Mamba stack.
#[derive(Clone, Copy, Debug)]
pub struct MambaDcLayerWeights {
    pub norm_weight: Var,
    pub norm_bias: Var,
    pub mamba: MambaLayerWeights,
    pub mamba_bwd: Option<MambaLayerWeights>,
    pub dwconv: Option<DwConvWeights>,
}

impl MambaDcLayerWeights {
    pub fn bind(w: &BoundWeights, index: usize, cfg: &ModelConfig) -> Result<Self> {
        let p = format!("layers.{index}");
        let v = |s: &str| w.var(&format!("{p}.{s}"));
        let dwconv = if cfg.has_outer_conv() {
            Some(DwConvWeights {
                norm_weight: v("norm2.weight")?,
                norm_bias: v("norm2.bias")?,
                kernel: v("dwconv.weight")?,
                bias: v("dwconv.bias")?,
            })
        } else {
            None
        };
        let mamba_bwd = if cfg.bidirectional {
            Some(MambaLayerWeights::bind(w, &format!("{p}.mamba_bwd"))?)
        } else {
            None
        };
        Ok(Self {
            norm_weight: v("norm1.weight")?,
            norm_bias: v("norm1.bias")?,
            mamba: MambaLayerWeights::bind(w, &format!("{p}.mamba"))?,
            mamba_bwd,
            dwconv,
        })
    }
}

fn eps<T: Scalar>(cfg: &ModelConfig) -> T {
    T::lit(cfg.ln_eps)
}

/// `Linear(SSM-branch ⊙ SiLU(gate))` on an `L×d_model` input.
pub fn mamba_layer<T: Scalar>(
    tape: &Tape<T>,
    f: Var,
    w: &MambaLayerWeights,
    cfg: &ModelConfig,
) -> Result<Var> {
    let (di, n, r) = (cfg.d_inner(), cfg.n_state, cfg.dt_rank());
    let xz = tape.matmul(f, w.in_proj)?;
    let x = tape.slice_cols(xz, 0, di)?;
    let z = tape.slice_cols(xz, di, 2 * di)?;

    let x = tape.depthwise_conv1d(x, w.conv_weight, w.conv_bias, Padding::Causal)?;
    let x = tape.silu(x)?;

    let proj = tape.matmul(x, w.x_proj)?;
    let dt_low = tape.slice_cols(proj, 0, r)?;
    let b = tape.slice_cols(proj, r, r + n)?;
    let c = tape.slice_cols(proj, r + n, r + 2 * n)?;
    let dt = tape.matmul(dt_low, w.dt_proj_weight)?;
    let dt = tape.add_row(dt, w.dt_proj_bias)?;
    let delta = tape.softplus(dt)?;

    let y = selective_scan(
        tape,
        ScanVars {
            u: x,
            delta,
            a_log: w.a_log,
            b,
            c,
            d_skip: w.d_skip,
        },
        cfg.scan,
    )?;
    let y = tape.layer_norm(y, w.norm_weight, w.norm_bias, eps(cfg))?;
    let gate = tape.silu(z)?;
    let y = tape.mul(y, gate)?;
    tape.matmul(y, w.out_proj)
}

/// `e = Mamba(LN(h)) + h` (plus the time-reversed stream when
/// bidirectional), then `out = DWConv(LN(e)) + e`.
pub fn mambadc_layer<T: Scalar>(
    tape: &Tape<T>,
    h: Var,
    w: &MambaDcLayerWeights,
    cfg: &ModelConfig,
) -> Result<Var> {
    let normed = tape.layer_norm(h, w.norm_weight, w.norm_bias, eps(cfg))?;
    let mut e = tape.add(mamba_layer(tape, normed, &w.mamba, cfg)?, h)?;
    if let Some(bwd) = &w.mamba_bwd {
        let rev = tape.reverse_rows(normed)?;
        let out = mamba_layer(tape, rev, bwd, cfg)?;
        e = tape.add(e, tape.reverse_rows(out)?)?;
    }
    let Some(dw) = &w.dwconv else {
        return Ok(e);
    };
    let normed = tape.layer_norm(e, dw.norm_weight, dw.norm_bias, eps(cfg))?;
    let conv = tape.depthwise_conv1d(normed, dw.kernel, dw.bias, cfg.outer_dw_padding)?;
    tape.add(conv, e)
}

/// Pre-sigmoid output `L×K` for an `L×K` magnitude input.
pub fn network_logits<T: Scalar>(
    tape: &Tape<T>,
    y_mag: Var,
    w: &BoundWeights,
    cfg: &ModelConfig,
) -> Result<Var> {
    let shape = tape.value(y_mag).shape().to_vec();
    if shape.len() != 2 || shape[1] != cfg.bins {
        return Err(Error::shape(
            "forward",
            format!("input {shape:?}, model expects L×{}", cfg.bins),
        ));
    }
    let x = tape.layer_norm(
        y_mag,
        w.var("input.norm.weight")?,
        w.var("input.norm.bias")?,
        eps(cfg),
    )?;
    let x = tape.relu(x)?;
    let x = tape.matmul(x, w.var("input.conv.weight")?)?;
    let mut h = tape.add_row(x, w.var("input.conv.bias")?)?;
    for i in 0..cfg.n_layers {
        let lw = MambaDcLayerWeights::bind(w, i, cfg)?;
        h = mambadc_layer(tape, h, &lw, cfg)?;
    }
    let out = tape.matmul(h, w.var("output.conv.weight")?)?;
    tape.add_row(out, w.var("output.conv.bias")?)
}

/// Mask estimate recorded on `tape`.
pub fn network_mask<T: Scalar>(
    tape: &Tape<T>,
    y_mag: Var,
    w: &BoundWeights,
    cfg: &ModelConfig,
) -> Result<Var> {
    let logits = network_logits(tape, y_mag, w, cfg)?;
    tape.sigmoid(logits)
}

/// Inference: mask values in `(0, 1)`, shape `L×K`.
pub fn forward<T: Scalar>(
    y_mag: &Tensor<T>,
    w: &NetworkWeights<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let bound = w.bind(&tape, false)?;
    let x = tape.constant(y_mag.clone())?;
    let m = network_mask(&tape, x, &bound, cfg)?;
    Ok((*tape.value(m)).clone())
}

/// Pre-sigmoid output for inference.
pub fn forward_logits<T: Scalar>(
    y_mag: &Tensor<T>,
    w: &NetworkWeights<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let bound = w.bind(&tape, false)?;
    let x = tape.constant(y_mag.clone())?;
    let m = network_logits(&tape, x, &bound, cfg)?;
    Ok((*tape.value(m)).clone())
}

/// [`forward`] for a bidirectional configuration.
pub fn forward_bidirectional<T: Scalar>(
    y_mag: &Tensor<T>,
    w: &NetworkWeights<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    if !cfg.bidirectional {
        return Err(Error::InvalidArgument(
            "forward_bidirectional needs a bidirectional config".into(),
        ));
    }
    forward(y_mag, w, cfg)
}
