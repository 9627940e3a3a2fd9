use std::rc::Rc;

use super::{Tape, Tensor, Var};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Silu,
    Softplus,
    Exp,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Silu,
        Activation::Softplus,
        Activation::Exp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Silu => "silu",
            Activation::Softplus => "softplus",
            Activation::Exp => "exp",
        }
    }

    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Silu => x * sigmoid(x),
            Activation::Softplus => softplus(x),
            Activation::Exp => x.exp(),
        }
    }

    /// Derivative at `x`, given `y = apply(x)`.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Softplus => sigmoid(x),
            Activation::Exp => y,
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)`, evaluated as `x + ln(1 + e^-x)` for positive `x`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`: `ln(e^y − 1)`.
pub fn softplus_inverse<T: Scalar>(y: T) -> T {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

/// Row-wise layer normalisation over the last axis with biased variance.
/// Returns the output together with the normalised input and the per-row
/// reciprocal standard deviations.
pub fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (rows, d) = x.dims2()?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "x {:?}, gamma {:?}, beta {:?}",
                x.shape(),
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("layer_norm eps must be > 0".into()));
    }
    let n = T::count(d);
    let mut out = Vec::with_capacity(rows * d);
    let mut xhat = Vec::with_capacity(rows * d);
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        for (j, &v) in row.iter().enumerate() {
            let h = (v - mean) * rs;
            xhat.push(h);
            out.push(h * gamma.data()[j] + beta.data()[j]);
        }
    }
    Ok((Tensor::from_vec2(rows, d, out)?, xhat, rstd))
}

fn expect_rank2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    t.dims2().map_err(|_| Error::shape(op, format!("expected rank 2, got {:?}", t.shape())))
}

impl<T: Scalar> Tape<T> {
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let out = av.matmul(&bv)?;
        self.record(
            "matmul",
            &[a, b],
            out,
            Box::new(move |g, needs| {
                let ga = if needs[0] {
                    Some(g.matmul(&bv.transpose()?)?)
                } else {
                    None
                };
                let gb = if needs[1] {
                    Some(av.transpose()?.matmul(g)?)
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(&self.value(b), |x, y| x + y)?;
        self.record(
            "add",
            &[a, b],
            out,
            Box::new(|g, _| Ok(vec![Some(g.clone()), Some(g.clone())])),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(&self.value(b), |x, y| x - y)?;
        self.record(
            "sub",
            &[a, b],
            out,
            Box::new(|g, _| Ok(vec![Some(g.clone()), Some(g.map(|v| -v))])),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let out = av.zip_map(&bv, |x, y| x * y)?;
        self.record(
            "mul",
            &[a, b],
            out,
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.zip_map(&bv, |u, y| u * y)).transpose()?;
                let gb = needs[1].then(|| g.zip_map(&av, |u, x| u * x)).transpose()?;
                Ok(vec![ga, gb])
            }),
        )
    }

    pub fn scale(&self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.record(
            "scale",
            &[a],
            out,
            Box::new(move |g, _| Ok(vec![Some(g.map(|v| v * s))])),
        )
    }

    /// `x[L×C] + bias[C]` broadcast over rows.
    pub fn add_row(&self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (rows, cols) = expect_rank2(&xv, "add_row")?;
        if bv.shape() != [cols] {
            return Err(Error::shape(
                "add_row",
                format!("x {:?}, bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = (*xv).clone();
        for r in 0..rows {
            for (o, &b) in out.data_mut()[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(bv.data())
            {
                *o += b;
            }
        }
        self.record(
            "add_row",
            &[x, bias],
            out,
            Box::new(move |g, _| {
                let mut gb = vec![T::zero(); cols];
                for r in 0..rows {
                    for (acc, &v) in gb.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                Ok(vec![Some(g.clone()), Some(Tensor::new(vec![cols], gb)?)])
            }),
        )
    }

    pub fn activation(&self, kind: Activation, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.map(|v| kind.apply(v));
        let yv = Rc::new(out.clone());
        self.record(
            kind.name(),
            &[x],
            out,
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(yv.data()))
                    .map(|(&u, (&xi, &yi))| u * kind.derivative(xi, yi))
                    .collect();
                Ok(vec![Some(Tensor::new(g.shape().to_vec(), data)?)])
            }),
        )
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn silu(&self, x: Var) -> Result<Var> {
        self.activation(Activation::Silu, x)
    }

    pub fn softplus(&self, x: Var) -> Result<Var> {
        self.activation(Activation::Softplus, x)
    }

    /// Per-row normalisation over the channel axis.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let gv = self.value(gamma);
        let (out, xhat, rstd) =
            layer_norm_forward(&self.value(x), &gv, &self.value(beta), eps)?;
        let (rows, d) = out.dims2()?;
        self.record(
            "layer_norm",
            &[x, gamma, beta],
            out,
            Box::new(move |g, _| {
                let n = T::count(d);
                let mut gx = vec![T::zero(); rows * d];
                let mut ggamma = vec![T::zero(); d];
                let mut gbeta = vec![T::zero(); d];
                for r in 0..rows {
                    let gr = g.row(r);
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gv.data()[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        ggamma[j] += gr[j] * hr[j];
                        gbeta[j] += gr[j];
                    }
                    mean_dh = mean_dh / n;
                    mean_dh_h = mean_dh_h / n;
                    for j in 0..d {
                        let dh = gr[j] * gv.data()[j];
                        gx[r * d + j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                Ok(vec![
                    Some(Tensor::from_vec2(rows, d, gx)?),
                    Some(Tensor::new(vec![d], ggamma)?),
                    Some(Tensor::new(vec![d], gbeta)?),
                ])
            }),
        )
    }

    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = expect_rank2(&xv, "slice_cols")?;
        let out = xv.slice_cols(start, end)?;
        let w = end - start;
        self.record(
            "slice_cols",
            &[x],
            out,
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    gx[r * cols + start..r * cols + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                Ok(vec![Some(Tensor::from_vec2(rows, cols, gx)?)])
            }),
        )
    }

    /// Time reversal along the leading axis.
    pub fn reverse_rows(&self, x: Var) -> Result<Var> {
        let out = self.value(x).reverse_rows();
        self.record(
            "reverse_rows",
            &[x],
            out,
            Box::new(|g, _| Ok(vec![Some(g.reverse_rows())])),
        )
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let out = Tensor::scalar(xv.sum());
        self.record(
            "sum",
            &[x],
            out,
            Box::new(move |g, _| Ok(vec![Some(Tensor::full(&shape, g.item()))])),
        )
    }

    /// Mean of `vars` (all scalars).
    pub fn mean_of(&self, vars: &[Var]) -> Result<Var> {
        if vars.is_empty() {
            return Err(Error::InvalidArgument("mean of zero values".into()));
        }
        let mut total = T::zero();
        for &v in vars {
            let val = self.value(v);
            if val.numel() != 1 {
                return Err(Error::shape("mean_of", format!("{:?}", val.shape())));
            }
            total += val.item();
        }
        let n = T::count(vars.len());
        let count = vars.len();
        self.record(
            "mean_of",
            vars,
            Tensor::scalar(total / n),
            Box::new(move |g, _| {
                let share = g.item() / n;
                Ok(vec![Some(Tensor::scalar(share)); count])
            }),
        )
    }

    /// Mean squared error over the rows flagged valid and every column.
    /// `target` carries no gradient.
    pub fn masked_mse(&self, pred: Var, target: &Tensor<T>, frame_valid: &[bool]) -> Result<Var> {
        let pv = self.value(pred);
        let value = crate::masks::mask_mse_loss(&pv, target, frame_valid)?;
        let (rows, cols) = pv.dims2()?;
        let valid = frame_valid.to_vec();
        let n_valid = valid.iter().filter(|&&v| v).count();
        let denom = T::count(n_valid * cols);
        let target = target.clone();
        self.record(
            "masked_mse",
            &[pred],
            Tensor::scalar(value),
            Box::new(move |g, _| {
                let scale = g.item() * T::lit(2.0) / denom;
                let mut gp = vec![T::zero(); rows * cols];
                for r in (0..rows).filter(|&r| valid[r]) {
                    for c in 0..cols {
                        let i = r * cols + c;
                        gp[i] = scale * (pv.data()[i] - target.data()[i]);
                    }
                }
                Ok(vec![Some(Tensor::from_vec2(rows, cols, gp)?)])
            }),
        )
    }
}
