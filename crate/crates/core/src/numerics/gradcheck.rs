//! Central-difference gradient oracle.

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Analytic (tape) and central-difference gradients of a scalar function of
/// several inputs.
pub struct GradientPair {
    pub analytic: Vec<Tensor<f64>>,
    pub numeric: Vec<Tensor<f64>>,
}

impl GradientPair {
    /// Max over all coordinates of `|g_analytic − g_fd| / max(1, |g_fd|)`.
    pub fn max_relative_error(&self) -> f64 {
        self.per_input_errors().into_iter().fold(0.0, f64::max)
    }

    pub fn per_input_errors(&self) -> Vec<f64> {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| relative_error(a, n))
            .collect()
    }
}

pub fn relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn check_step(h: f64) -> Result<()> {
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {h} outside [1e-6, 1e-4]"
        )));
    }
    Ok(())
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    Ok(value.item())
}

/// Computes both gradients of `f` with respect to every input.
pub fn gradient_pair<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradientPair>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    check_step(h)?;
    let tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&tape, &vars)?;
    let mut grads = tape.backward(out)?;
    let analytic = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut work = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = evaluate(&f, &work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = evaluate(&f, &work)?;
            work[i].data_mut()[j] = orig;
            g.push((plus - minus) / (2.0 * h));
        }
        numeric.push(Tensor::new(inputs[i].shape().to_vec(), g)?);
    }
    Ok(GradientPair { analytic, numeric })
}

/// Max relative error between the tape gradient of `f` at `x` and central
/// differences with step `h`.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let pair = gradient_pair(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(pair.max_relative_error())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.3 - 1.0);
        let err = finite_diff_check(|t, v| t.sum(v), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_step_outside_range() {
        let x = Tensor::scalar(1.0);
        assert!(finite_diff_check(|t, v| t.sum(v), &x, 1e-2).is_err());
    }
}
