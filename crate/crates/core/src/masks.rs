//! Time-frequency mask targets and the mask-approximation loss.

use std::str::FromStr;

use crate::dsp::{magnitude, phase, Spectrogram};
use crate::numerics::Tensor;
use crate::{Error, Result, Scalar};

/// Denominator guard for both mask definitions.
pub const MASK_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum MaskKind {
    /// Ideal ratio mask.
    #[default]
    Irm,
    /// Phase-sensitive mask, clipped to `[0, 1]`.
    Psm,
}

impl MaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::Irm => "irm",
            MaskKind::Psm => "psm",
        }
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "irm" => Ok(MaskKind::Irm),
            "psm" => Ok(MaskKind::Psm),
            other => Err(Error::InvalidArgument(format!("unknown mask kind {other:?}"))),
        }
    }
}

/// `L×K` mask with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask<T> {
    pub values: Tensor<T>,
    pub kind: MaskKind,
}

/// `sqrt(|S|² / (|S|² + |D|² + eps))`.
pub fn irm<T: Scalar>(s_mag: &Tensor<T>, d_mag: &Tensor<T>, eps: T) -> Result<Mask<T>> {
    s_mag.expect_same_shape(d_mag, "irm")?;
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("irm eps must be > 0".into()));
    }
    if s_mag.data().iter().chain(d_mag.data()).any(|&v| v < T::zero()) {
        return Err(Error::InvalidArgument("irm: negative magnitude".into()));
    }
    let values = s_mag.zip_map(d_mag, |s, d| {
        let s2 = s * s;
        (s2 / (s2 + d * d + eps)).sqrt().min(T::one())
    })?;
    Ok(Mask {
        values,
        kind: MaskKind::Irm,
    })
}

/// `clip(|S| / (|Y| + eps) · cos(φ_s − φ_y), 0, 1)`.
pub fn psm<T: Scalar>(s: &Spectrogram<T>, y: &Spectrogram<T>, eps: T) -> Result<Mask<T>> {
    if !s.same_shape(y) {
        return Err(Error::shape(
            "psm",
            format!("{}×{} vs {}×{}", s.frames, s.bins, y.frames, y.bins),
        ));
    }
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("psm eps must be > 0".into()));
    }
    let (s_mag, y_mag) = (magnitude(s), magnitude(y));
    let (s_ph, y_ph) = (phase(s), phase(y));
    let data = (0..s_mag.numel())
        .map(|i| {
            let ratio = s_mag.data()[i] / (y_mag.data()[i] + eps);
            (ratio * (s_ph.data()[i] - y_ph.data()[i]).cos())
                .max(T::zero())
                .min(T::one())
        })
        .collect();
    Ok(Mask {
        values: Tensor::new(s_mag.shape().to_vec(), data)?,
        kind: MaskKind::Psm,
    })
}

/// Target mask of the requested kind from clean, noise and noisy spectra.
pub fn target_mask<T: Scalar>(
    kind: MaskKind,
    clean: &Spectrogram<T>,
    noise: &Spectrogram<T>,
    noisy: &Spectrogram<T>,
) -> Result<Mask<T>> {
    let eps = T::lit(MASK_EPS);
    match kind {
        MaskKind::Irm => irm(&magnitude(clean), &magnitude(noise), eps),
        MaskKind::Psm => psm(clean, noisy, eps),
    }
}

/// `Ŝ = M ⊙ Y` on real and imaginary parts; the noisy phase is kept.
pub fn apply_mask<T: Scalar>(y: &Spectrogram<T>, m: &Tensor<T>) -> Result<Spectrogram<T>> {
    if m.shape() != [y.frames, y.bins] {
        return Err(Error::shape(
            "apply_mask",
            format!("mask {:?} for {}×{} spectrogram", m.shape(), y.frames, y.bins),
        ));
    }
    let scale = |v: &[T]| v.iter().zip(m.data()).map(|(&a, &g)| a * g).collect();
    Ok(Spectrogram {
        frames: y.frames,
        bins: y.bins,
        re: scale(&y.re),
        im: scale(&y.im),
    })
}

/// Mean of `(pred − target)²` over valid frames and all bins.
pub fn mask_mse_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    frame_valid: &[bool],
) -> Result<T> {
    pred.expect_same_shape(target, "mask_mse_loss")?;
    let (rows, cols) = pred.dims2()?;
    if frame_valid.len() != rows {
        return Err(Error::shape(
            "mask_mse_loss",
            format!("{} validity flags for {rows} frames", frame_valid.len()),
        ));
    }
    let n_valid = frame_valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Err(Error::InvalidArgument("mask_mse_loss: no valid frames".into()));
    }
    let mut total = T::zero();
    for r in (0..rows).filter(|&r| frame_valid[r]) {
        for (&p, &t) in pred.row(r).iter().zip(target.row(r)) {
            total += (p - t) * (p - t);
        }
    }
    Ok(total / T::count(n_valid * cols))
}
