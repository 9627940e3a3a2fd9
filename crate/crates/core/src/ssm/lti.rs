//! Global-convolution form of a time-invariant SSM channel.

use crate::{Error, Result, Scalar};

/// `K̄ = (⟨c, b̄⟩, ⟨c, ā⊙b̄⟩, …, ⟨c, ā^{L−1}⊙b̄⟩)` for one channel with diagonal
/// `ā` (all vectors of length `N`).
pub fn lti_kernel<T: Scalar>(a_bar: &[T], b_bar: &[T], c: &[T], len: usize) -> Result<Vec<T>> {
    if a_bar.len() != b_bar.len() || a_bar.len() != c.len() {
        return Err(Error::shape(
            "lti_kernel",
            format!("ā {}, b̄ {}, c {}", a_bar.len(), b_bar.len(), c.len()),
        ));
    }
    let mut power: Vec<T> = b_bar.to_vec();
    let mut kernel = Vec::with_capacity(len);
    for _ in 0..len {
        kernel.push(power.iter().zip(c).map(|(&p, &ci)| p * ci).sum());
        for (p, &a) in power.iter_mut().zip(a_bar) {
            *p *= a;
        }
    }
    Ok(kernel)
}

/// Causal convolution `z_t = Σ_{τ≤t} K̄_τ · u_{t−τ}`.
pub fn lti_apply<T: Scalar>(u: &[T], kernel: &[T]) -> Vec<T> {
    (0..u.len())
        .map(|t| {
            (0..=t.min(kernel.len().saturating_sub(1)))
                .map(|tau| kernel[tau] * u[t - tau])
                .sum()
        })
        .collect()
}
