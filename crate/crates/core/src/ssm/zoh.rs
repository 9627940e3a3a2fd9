//! Zero-order-hold discretisation of a diagonal state matrix.

use crate::Scalar;

/// Below this `|Δ·a|` the factor `(e^x − 1)/x` switches to its Taylor series.
pub const TAYLOR_THRESHOLD: f64 = 1e-4;

/// Below this `|x|` the derivative of the factor uses its Taylor series.
const DERIVATIVE_TAYLOR_THRESHOLD: f64 = 1e-3;

/// `(e^x − 1) / x`, continuous through `x = 0`.
#[inline]
pub fn zoh_factor<T: Scalar>(x: T) -> T {
    if x.abs() < T::lit(TAYLOR_THRESHOLD) {
        // 1 + x/2 + x²/6 + x³/24; the next term is below 1e-18 here
        T::one() + x * (T::lit(0.5) + x * (T::lit(1.0 / 6.0) + x * T::lit(1.0 / 24.0)))
    } else {
        x.exp_m1() / x
    }
}

/// `d/dx [(e^x − 1) / x]`.
#[inline]
pub fn zoh_factor_derivative<T: Scalar>(x: T) -> T {
    if x.abs() < T::lit(DERIVATIVE_TAYLOR_THRESHOLD) {
        T::lit(0.5)
            + x * (T::lit(1.0 / 3.0)
                + x * (T::lit(1.0 / 8.0) + x * (T::lit(1.0 / 30.0) + x * T::lit(1.0 / 144.0))))
    } else {
        (x.exp() - zoh_factor(x)) / x
    }
}

/// `(ā, b̄) = (exp(Δa), (Δa)⁻¹(exp(Δa) − 1)·Δb)` for one diagonal entry.
#[inline]
pub fn discretize_zoh<T: Scalar>(a: T, b: T, delta: T) -> (T, T) {
    let x = delta * a;
    (x.exp(), zoh_factor(x) * delta * b)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Σ_{k<30} x^k / (k+1)!
    fn series(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..30 {
            sum += term;
            term *= x / (k as f64 + 2.0);
        }
        sum
    }

    #[test]
    fn closed_form_scalar_case() {
        let (a_bar, b_bar) = discretize_zoh(-1.0f64, 1.0, 2f64.ln());
        assert!((a_bar - 0.5).abs() < 1e-15);
        assert!((b_bar - 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_step_limit() {
        let (a_bar, b_bar) = discretize_zoh(-1.0f64, 3.0, 1e-9);
        assert!((a_bar - 1.0).abs() < 1e-8);
        assert!((b_bar - 3e-9).abs() < 1e-17);
    }

    #[test]
    fn factor_matches_series_on_both_branches() {
        for &x in &[-3.0, -1.0, -0.2, -1e-3, -1.0001e-4, -0.9999e-4, -1e-6, 0.0, 1e-5, 0.5] {
            let got: f64 = zoh_factor(x);
            assert!((got - series(x)).abs() < 1e-14, "x={x}");
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for &x in &[-4.0, -1.0, -2e-3, -0.9e-3, -1e-5, 0.0, 3e-4, 0.7] {
            let h = 1e-6;
            let fd = (series(x + h) - series(x - h)) / (2.0 * h);
            assert!((zoh_factor_derivative(x) - fd).abs() < 1e-8, "x={x}");
        }
    }
}
