//! Depthwise 1-D convolution along time.

use super::Padding;
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result, Scalar};

fn offset(padding: Padding, k: usize) -> Result<usize> {
    match padding {
        Padding::Causal => Ok(k - 1),
        Padding::Centered if k % 2 == 1 => Ok((k - 1) / 2),
        Padding::Centered => Err(Error::InvalidArgument(format!(
            "centered depthwise conv needs an odd width, got {k}"
        ))),
    }
}

fn check(x: &Tensor<impl Scalar>, kernel: &Tensor<impl Scalar>, bias: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
    let (len, ch) = x
        .dims2()
        .map_err(|_| Error::shape("depthwise_conv1d", format!("x {:?}", x.shape())))?;
    let (kc, k) = kernel
        .dims2()
        .map_err(|_| Error::shape("depthwise_conv1d", format!("kernel {:?}", kernel.shape())))?;
    if kc != ch || bias.shape() != [ch] {
        return Err(Error::shape(
            "depthwise_conv1d",
            format!(
                "x {:?}, kernel {:?}, bias {:?}",
                x.shape(),
                kernel.shape(),
                bias.shape()
            ),
        ));
    }
    Ok((len, ch, k))
}

/// `y[t,c] = Σ_j kernel[c,j]·x[t−offset+j, c] + bias[c]` with zero padding.
pub fn depthwise_conv1d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (len, ch, k) = check(x, kernel, bias)?;
    let off = offset(padding, k)?;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = Vec::with_capacity(len * ch);
    for t in 0..len {
        for c in 0..ch {
            let mut acc = bias.data()[c];
            for j in 0..k {
                let Some(s) = (t + j).checked_sub(off).filter(|&s| s < len) else {
                    continue;
                };
                acc += kd[c * k + j] * xd[s * ch + c];
            }
            out.push(acc);
        }
    }
    Tensor::from_vec2(len, ch, out)
}

impl<T: Scalar> Tape<T> {
    pub fn depthwise_conv1d(&self, x: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let out = depthwise_conv1d(&xv, &kv, &self.value(bias), padding)?;
        let (len, ch, k) = check(&xv, &kv, &self.value(bias))?;
        let off = offset(padding, k)?;
        self.record(
            "depthwise_conv1d",
            &[x, kernel, bias],
            out,
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut gx = vec![T::zero(); len * ch];
                let mut gk = vec![T::zero(); ch * k];
                let mut gb = vec![T::zero(); ch];
                for t in 0..len {
                    for c in 0..ch {
                        let up = gd[t * ch + c];
                        gb[c] += up;
                        for j in 0..k {
                            let Some(s) = (t + j).checked_sub(off).filter(|&s| s < len) else {
                                continue;
                            };
                            gk[c * k + j] += up * xv.data()[s * ch + c];
                            gx[s * ch + c] += up * kv.data()[c * k + j];
                        }
                    }
                }
                Ok(vec![
                    needs[0].then(|| Tensor::from_vec2(len, ch, gx)).transpose()?,
                    needs[1].then(|| Tensor::from_vec2(ch, k, gk)).transpose()?,
                    needs[2].then(|| Tensor::new(vec![ch], gb)).transpose()?,
                ])
            }),
        )
    }
}
