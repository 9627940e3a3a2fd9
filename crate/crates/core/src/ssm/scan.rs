//! Selective-scan evaluators.
//!
//! Layout conventions: `u`, `Δ` are `L × D`; `B`, `C` are `L × N` and shared
//! by every channel; `A` is `D × N`; hidden states are stored `L × D × N`.

use rayon::prelude::*;

use super::params::{SelectiveInputs, SsmParams};
use super::zoh::{zoh_factor, zoh_factor_derivative};
use crate::numerics::Tensor;
use crate::{Error, Result, Scalar};

/// Below this length the parallel evaluator runs the plain recurrence.
pub const PARALLEL_MIN_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScanEvaluator {
    #[default]
    Sequential,
    Parallel,
}

impl ScanEvaluator {
    pub fn name(self) -> &'static str {
        match self {
            ScanEvaluator::Sequential => "sequential",
            ScanEvaluator::Parallel => "parallel",
        }
    }
}

/// Element of the first-order linear recurrence `h ← decay·h + value`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPair<T> {
    pub decay: T,
    pub value: T,
}

impl<T: Scalar> ScanPair<T> {
    pub fn identity() -> Self {
        Self {
            decay: T::one(),
            value: T::zero(),
        }
    }

    /// Applies `self` first, then `later`:
    /// `(a₁, b₁) ∘ (a₂, b₂) = (a₂·a₁, a₂·b₁ + b₂)`.
    #[inline]
    pub fn then(self, later: Self) -> Self {
        Self {
            decay: later.decay * self.decay,
            value: later.decay * self.value + later.value,
        }
    }
}

/// In-place inclusive scan with a work-efficient up-sweep / down-sweep
/// (Blelloch). Short inputs fall back to a left fold.
pub fn inclusive_scan<T: Scalar>(items: &mut [ScanPair<T>]) {
    let len = items.len();
    if len < PARALLEL_MIN_LEN {
        for i in 1..len {
            items[i] = items[i - 1].then(items[i]);
        }
        return;
    }
    let size = len.next_power_of_two();
    let mut tree: Vec<ScanPair<T>> = items.to_vec();
    tree.resize(size, ScanPair::identity());

    // up-sweep: tree[i] holds the reduction of its subtree
    let mut stride = 1;
    while stride < size {
        let mut i = 2 * stride - 1;
        while i < size {
            tree[i] = tree[i - stride].then(tree[i]);
            i += 2 * stride;
        }
        stride *= 2;
    }
    // down-sweep: tree[i] becomes the exclusive prefix of position i
    tree[size - 1] = ScanPair::identity();
    stride = size / 2;
    while stride >= 1 {
        let mut i = 2 * stride - 1;
        while i < size {
            let left = tree[i - stride];
            tree[i - stride] = tree[i];
            tree[i] = tree[i].then(left);
            i += 2 * stride;
        }
        stride /= 2;
    }
    for (item, prefix) in items.iter_mut().zip(tree) {
        *item = prefix.then(*item);
    }
}

/// Borrowed, shape-checked view of everything a scan needs.
#[derive(Clone, Copy)]
pub(crate) struct ScanView<'a, T> {
    pub len: usize,
    pub channels: usize,
    pub states: usize,
    pub u: &'a [T],
    pub delta: &'a [T],
    /// `A = −exp(a_log)`, `D × N`.
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d_skip: Option<&'a [T]>,
}

impl<'a, T: Scalar> ScanView<'a, T> {
    pub fn new(
        u: &'a Tensor<T>,
        delta: &'a Tensor<T>,
        a: &'a [T],
        b: &'a Tensor<T>,
        c: &'a Tensor<T>,
        d_skip: Option<&'a Tensor<T>>,
    ) -> Result<Self> {
        let (len, channels) = u.dims2()?;
        let (lb, states) = b.dims2()?;
        let bad = delta.shape() != [len, channels]
            || lb != len
            || c.shape() != [len, states]
            || a.len() != channels * states
            || d_skip.is_some_and(|d| d.shape() != [channels]);
        if bad {
            return Err(Error::shape(
                "selective_scan",
                format!(
                    "u {:?}, delta {:?}, A {} values, B {:?}, C {:?}, D {:?}",
                    u.shape(),
                    delta.shape(),
                    a.len(),
                    b.shape(),
                    c.shape(),
                    d_skip.map(|d| d.shape().to_vec())
                ),
            ));
        }
        Ok(Self {
            len,
            channels,
            states,
            u: u.data(),
            delta: delta.data(),
            a,
            b: b.data(),
            c: c.data(),
            d_skip: d_skip.map(|d| d.data()),
        })
    }

    /// `(ā, b̄·u)` for time `t`, channel `d`, state `n`.
    #[inline]
    fn pair(&self, t: usize, d: usize, n: usize) -> ScanPair<T> {
        let dt = self.delta[t * self.channels + d];
        let x = dt * self.a[d * self.states + n];
        ScanPair {
            decay: x.exp(),
            value: zoh_factor(x) * dt * self.b[t * self.states + n] * self.u[t * self.channels + d],
        }
    }

    #[inline]
    fn skip(&self, t: usize, d: usize) -> T {
        self.d_skip
            .map_or(T::zero(), |ds| ds[d] * self.u[t * self.channels + d])
    }

    /// Plain recurrence. When `states` is given it receives every `h_t`.
    pub fn run_sequential(&self, mut states: Option<&mut Vec<T>>) -> Vec<T> {
        let (l, dd, nn) = (self.len, self.channels, self.states);
        let mut h = vec![T::zero(); dd * nn];
        let mut z = vec![T::zero(); l * dd];
        if let Some(s) = states.as_deref_mut() {
            s.clear();
            s.reserve(l * dd * nn);
        }
        for t in 0..l {
            let c_t = &self.c[t * nn..(t + 1) * nn];
            for d in 0..dd {
                let hd = &mut h[d * nn..(d + 1) * nn];
                let mut acc = T::zero();
                for (n, hv) in hd.iter_mut().enumerate() {
                    let p = self.pair(t, d, n);
                    *hv = p.decay * *hv + p.value;
                    acc += c_t[n] * *hv;
                }
                z[t * dd + d] = acc + self.skip(t, d);
            }
            if let Some(s) = states.as_deref_mut() {
                s.extend_from_slice(&h);
            }
        }
        z
    }

    /// Per-channel tree scans, channels distributed over the rayon pool.
    pub fn run_parallel(&self, want_states: bool) -> (Vec<T>, Option<Vec<T>>) {
        let (l, dd, nn) = (self.len, self.channels, self.states);
        let per_channel: Vec<(Vec<T>, Vec<T>)> = (0..dd)
            .into_par_iter()
            .map(|d| {
                let mut z = vec![T::zero(); l];
                let mut hs = if want_states { vec![T::zero(); nn * l] } else { Vec::new() };
                let mut lane = vec![ScanPair::identity(); l];
                for n in 0..nn {
                    for (t, p) in lane.iter_mut().enumerate() {
                        *p = self.pair(t, d, n);
                    }
                    inclusive_scan(&mut lane);
                    for t in 0..l {
                        z[t] += self.c[t * nn + n] * lane[t].value;
                    }
                    if want_states {
                        for t in 0..l {
                            hs[n * l + t] = lane[t].value;
                        }
                    }
                }
                for (t, zt) in z.iter_mut().enumerate() {
                    *zt += self.skip(t, d);
                }
                (z, hs)
            })
            .collect();

        let mut z = vec![T::zero(); l * dd];
        let mut states = want_states.then(|| vec![T::zero(); l * dd * nn]);
        for (d, (zc, hs)) in per_channel.into_iter().enumerate() {
            for t in 0..l {
                z[t * dd + d] = zc[t];
            }
            if let Some(s) = states.as_mut() {
                for n in 0..nn {
                    for t in 0..l {
                        s[(t * dd + d) * nn + n] = hs[n * l + t];
                    }
                }
            }
        }
        (z, states)
    }

    pub fn run(&self, evaluator: ScanEvaluator, want_states: bool) -> (Vec<T>, Option<Vec<T>>) {
        match evaluator {
            ScanEvaluator::Sequential => {
                let mut states = Vec::new();
                let z = self.run_sequential(want_states.then_some(&mut states));
                (z, want_states.then_some(states))
            }
            ScanEvaluator::Parallel if self.len < PARALLEL_MIN_LEN => {
                self.run(ScanEvaluator::Sequential, want_states)
            }
            ScanEvaluator::Parallel => self.run_parallel(want_states),
        }
    }

    /// Reverse-time adjoint sweep given the stored states and `∂L/∂z`.
    pub fn backward(&self, states: &[T], gz: &[T]) -> ScanGrads<T> {
        let (l, dd, nn) = (self.len, self.channels, self.states);
        let mut g = ScanGrads {
            u: vec![T::zero(); l * dd],
            delta: vec![T::zero(); l * dd],
            a: vec![T::zero(); dd * nn],
            b: vec![T::zero(); l * nn],
            c: vec![T::zero(); l * nn],
            d_skip: vec![T::zero(); dd],
        };
        // adjoint of h_t carried from t+1
        let mut carry = vec![T::zero(); dd * nn];
        for t in (0..l).rev() {
            for d in 0..dd {
                let gzt = gz[t * dd + d];
                let dt = self.delta[t * dd + d];
                let ut = self.u[t * dd + d];
                let mut du = T::zero();
                if let Some(ds) = self.d_skip {
                    du = gzt * ds[d];
                    g.d_skip[d] += gzt * ut;
                }
                let mut ddelta = T::zero();
                for n in 0..nn {
                    let a = self.a[d * nn + n];
                    let bt = self.b[t * nn + n];
                    let x = dt * a;
                    let a_bar = x.exp();
                    let phi = zoh_factor(x);
                    let b_bar = phi * dt * bt;
                    let h = states[(t * dd + d) * nn + n];
                    let h_prev = if t > 0 {
                        states[((t - 1) * dd + d) * nn + n]
                    } else {
                        T::zero()
                    };
                    g.c[t * nn + n] += gzt * h;
                    let lam = carry[d * nn + n] + gzt * self.c[t * nn + n];
                    let g_abar = lam * h_prev;
                    let g_bbar = lam * ut;
                    du += lam * b_bar;
                    let gx = g_abar * a_bar + g_bbar * zoh_factor_derivative(x) * dt * bt;
                    ddelta += gx * a + g_bbar * phi * bt;
                    g.a[d * nn + n] += gx * dt;
                    g.b[t * nn + n] += g_bbar * phi * dt;
                    carry[d * nn + n] = lam * a_bar;
                }
                g.u[t * dd + d] = du;
                g.delta[t * dd + d] = ddelta;
            }
        }
        g
    }
}

/// Gradients of a scan with respect to each of its inputs (`a` is with
/// respect to `A`, not `a_log`).
pub(crate) struct ScanGrads<T> {
    pub u: Vec<T>,
    pub delta: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d_skip: Vec<T>,
}

fn evaluate<T: Scalar>(
    u: &Tensor<T>,
    si: &SelectiveInputs<T>,
    p: &SsmParams<T>,
    evaluator: ScanEvaluator,
) -> Result<Tensor<T>> {
    p.validate()?;
    if si.delta.data().iter().any(|&v| v <= T::zero()) {
        return Err(Error::InvalidArgument("delta must be strictly positive".into()));
    }
    let a = p.a();
    let view = ScanView::new(u, &si.delta, &a, &si.b, &si.c, Some(&p.d_skip))?;
    let (z, _) = view.run(evaluator, false);
    Tensor::new(u.shape().to_vec(), z)
}

/// `h_t = ā_t ⊙ h_{t−1} + b̄_t·u_t`, `z_t = ⟨c_t, h_t⟩ + D·u_t`, with
/// `h_{−1} = 0`, evaluated step by step.
pub fn selective_scan_seq<T: Scalar>(
    u: &Tensor<T>,
    si: &SelectiveInputs<T>,
    p: &SsmParams<T>,
) -> Result<Tensor<T>> {
    evaluate(u, si, p, ScanEvaluator::Sequential)
}

/// Same result as [`selective_scan_seq`], computed with per-lane Blelloch
/// scans over the pairs `(ā_t, b̄_t·u_t)`.
pub fn selective_scan_parallel<T: Scalar>(
    u: &Tensor<T>,
    si: &SelectiveInputs<T>,
    p: &SsmParams<T>,
) -> Result<Tensor<T>> {
    evaluate(u, si, p, ScanEvaluator::Parallel)
}

/// Recurrence over already-discretised coefficients: `a_bar` and `b_bar` are
/// `L × D × N`, `c` is `L × N`. Returns `L × D` outputs (no skip term).
pub fn scan_discretized<T: Scalar>(
    u: &Tensor<T>,
    a_bar: &[T],
    b_bar: &[T],
    c: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (l, dd) = u.dims2()?;
    let (lc, nn) = c.dims2()?;
    if lc != l || a_bar.len() != l * dd * nn || b_bar.len() != l * dd * nn {
        return Err(Error::shape("scan_discretized", "inconsistent extents"));
    }
    let mut h = vec![T::zero(); dd * nn];
    let mut z = vec![T::zero(); l * dd];
    for t in 0..l {
        for d in 0..dd {
            let mut acc = T::zero();
            for n in 0..nn {
                let i = (t * dd + d) * nn + n;
                let hv = &mut h[d * nn + n];
                *hv = a_bar[i] * *hv + b_bar[i] * u.data()[t * dd + d];
                acc += c.data()[t * nn + n] * *hv;
            }
            z[t * dd + d] = acc;
        }
    }
    Tensor::new(vec![l, dd], z)
}
