//! Learning-rate schedule, gradient clipping and Adam.

use super::{Schedule, TrainConfig};
use crate::model::NetworkWeights;
use crate::numerics::Tensor;
use crate::{Error, Result, Scalar};

/// The two arguments of the `min` in [`warmup_lr`]: `(step^−½, step · warmup^−³ᐟ²)`.
/// The ramp is evaluated as `(step / warmup) · warmup^−½` so both branches
/// are bitwise equal at `step == warmup`.
pub fn warmup_branches(step: u64, warmup_steps: u64) -> (f64, f64) {
    let (s, w) = (step as f64, warmup_steps as f64);
    (s.powf(-0.5), (s / w) * w.powf(-0.5))
}

/// `d_model^−½ · min(step^−½, step · warmup^−³ᐟ²)`.
pub fn warmup_lr(step: u64, d_model: usize, warmup_steps: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::InvalidArgument("warmup_lr: step counts from 1".into()));
    }
    if warmup_steps == 0 || d_model == 0 {
        return Err(Error::InvalidArgument(
            "warmup_lr: d_model and warmup_steps must be positive".into(),
        ));
    }
    let (decay, ramp) = warmup_branches(step, warmup_steps);
    Ok((d_model as f64).powf(-0.5) * decay.min(ramp))
}

/// Learning rate used at `step` (1-based).
pub fn learning_rate(cfg: &TrainConfig, step: u64, d_model: usize) -> Result<f64> {
    match cfg.schedule {
        Schedule::Constant => Ok(cfg.lr_base),
        Schedule::Warmup => Ok(cfg.lr_scale * warmup_lr(step, d_model, cfg.warmup_steps)?),
    }
}

pub fn clip_tensor<T: Scalar>(g: &mut Tensor<T>, lo: T, hi: T) {
    for v in g.data_mut() {
        *v = v.max(lo).min(hi);
    }
}

/// Clamps every stored gradient to `[lo, hi]`.
pub fn clip_gradients<T: Scalar>(w: &mut NetworkWeights<T>, lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("clip range [{lo}, {hi}]")));
    }
    let (lo, hi) = (T::lit(lo), T::lit(hi));
    for p in w.iter_mut() {
        if let Some(g) = &mut p.grad {
            clip_tensor(g, lo, hi);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl From<&TrainConfig> for AdamHyper {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// First and second moments, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(w: &NetworkWeights<T>) -> Self {
        let zeros = || w.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update from the stored gradients. Parameters
/// without a gradient are left alone.
pub fn adam_step<T: Scalar>(
    w: &mut NetworkWeights<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    if state.m.len() != w.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} moment buffers for {} parameters", state.m.len(), w.len()),
        ));
    }
    for ((p, m), v) in w.iter().zip(&state.m).zip(&state.v) {
        let shape_ok = m.shape() == p.value.shape()
            && p.grad.as_ref().map_or(true, |g| g.shape() == p.value.shape());
        if !shape_ok {
            return Err(Error::shape("adam_step", format!("parameter {}", p.name)));
        }
        debug_assert_eq!(v.shape(), m.shape());
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
    let (one, eps) = (T::one(), T::lit(hyper.eps));
    let (c1, c2, lr) = (T::lit(c1), T::lit(c2), T::lit(lr));
    for ((p, m), v) in w.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let Some(g) = &p.grad else { continue };
        let params = p.value.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            let mi = &mut m.data_mut()[i];
            *mi = b1 * *mi + (one - b1) * gi;
            let vi = &mut v.data_mut()[i];
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
