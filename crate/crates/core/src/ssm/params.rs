use rand::Rng;

use crate::numerics::{softplus, softplus_inverse, Tensor};
use crate::{Error, Result, Scalar};

/// Continuous SSM parameters of one selective-scan block with `d_inner`
/// channels and `n_state` diagonal states per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T> {
    pub n_state: usize,
    pub dt_rank: usize,
    /// `log(−A)`, `d_inner × n_state`.
    pub a_log: Tensor<T>,
    /// Direct feed-through `D`, `d_inner`.
    pub d_skip: Tensor<T>,
    /// `d_inner × (dt_rank + 2·n_state)`.
    pub x_proj_weight: Tensor<T>,
    /// `dt_rank × d_inner`.
    pub dt_proj_weight: Tensor<T>,
    /// `d_inner`.
    pub dt_proj_bias: Tensor<T>,
}

/// Per-timestep `Δ` (`L × d_inner`, positive), `B` and `C` (`L × n_state`).
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveInputs<T> {
    pub delta: Tensor<T>,
    pub b: Tensor<T>,
    pub c: Tensor<T>,
}

/// Hidden state `h`, `d_inner × n_state`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanState<T> {
    pub h: Tensor<T>,
}

/// `a_log = log(1..=N)` for every channel, i.e. `A = −1, −2, …, −N`.
pub fn init_a_log<T: Scalar>(d_inner: usize, n_state: usize) -> Tensor<T> {
    Tensor::from_fn(&[d_inner, n_state], |i| T::lit(((i % n_state) + 1) as f64).ln())
}

/// Biases whose softplus is log-uniform in `[dt_min, dt_max]`.
pub fn init_dt_bias<T: Scalar, R: Rng + ?Sized>(
    d_inner: usize,
    dt_min: f64,
    dt_max: f64,
    rng: &mut R,
) -> Tensor<T> {
    Tensor::from_fn(&[d_inner], |_| {
        let dt = rng.gen_range(dt_min.ln()..=dt_max.ln()).exp();
        T::lit(softplus_inverse(dt))
    })
}

impl<T: Scalar> SsmParams<T> {
    /// Standard initialisation: S4D-real `A`, zero `D`, uniform projections in
    /// `±1/sqrt(fan_in)` and `Δ` biases log-uniform in `[1e-3, 1e-1]`.
    pub fn init<R: Rng + ?Sized>(d_inner: usize, n_state: usize, dt_rank: usize, rng: &mut R) -> Self {
        let uniform = |shape: &[usize], fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..=bound)))
        };
        let x_proj_weight = uniform(&[d_inner, dt_rank + 2 * n_state], d_inner, rng);
        let dt_proj_weight = uniform(&[dt_rank, d_inner], dt_rank, rng);
        Self {
            n_state,
            dt_rank,
            a_log: init_a_log(d_inner, n_state),
            d_skip: Tensor::zeros(&[d_inner]),
            x_proj_weight,
            dt_proj_weight,
            dt_proj_bias: init_dt_bias(d_inner, 1e-3, 1e-1, rng),
        }
    }

    pub fn d_inner(&self) -> usize {
        self.a_log.shape()[0]
    }

    /// Continuous state matrix diagonal `A = −exp(a_log)`, strictly negative.
    pub fn a(&self) -> Vec<T> {
        self.a_log.data().iter().map(|&v| -v.exp()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_inner();
        let n = self.n_state;
        let r = self.dt_rank;
        if r == 0 || n == 0 {
            return Err(Error::InvalidArgument("dt_rank and n_state must be >= 1".into()));
        }
        let checks: [(&str, &Tensor<T>, Vec<usize>); 5] = [
            ("a_log", &self.a_log, vec![d, n]),
            ("d_skip", &self.d_skip, vec![d]),
            ("x_proj_weight", &self.x_proj_weight, vec![d, r + 2 * n]),
            ("dt_proj_weight", &self.dt_proj_weight, vec![r, d]),
            ("dt_proj_bias", &self.dt_proj_bias, vec![d]),
        ];
        for (name, t, want) in checks {
            if t.shape() != want.as_slice() {
                return Err(Error::shape(
                    "ssm_params",
                    format!("{name} is {:?}, expected {want:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// Projects `x` (`L × d_inner`) to the input-dependent `Δ`, `B`, `C`.
pub fn ssm_parameterize<T: Scalar>(x: &Tensor<T>, p: &SsmParams<T>) -> Result<SelectiveInputs<T>> {
    p.validate()?;
    let (_, d) = x.dims2()?;
    if d != p.d_inner() {
        return Err(Error::shape(
            "ssm_parameterize",
            format!("x has {d} channels, params have {}", p.d_inner()),
        ));
    }
    let (r, n) = (p.dt_rank, p.n_state);
    let proj = x.matmul(&p.x_proj_weight)?;
    let dt_low = proj.slice_cols(0, r)?;
    let b = proj.slice_cols(r, r + n)?;
    let c = proj.slice_cols(r + n, r + 2 * n)?;
    let mut delta = dt_low.matmul(&p.dt_proj_weight)?;
    let cols = d;
    for (i, v) in delta.data_mut().iter_mut().enumerate() {
        *v = softplus(*v + p.dt_proj_bias.data()[i % cols]);
    }
    Ok(SelectiveInputs { delta, b, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_gives_bias_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = SsmParams::<f64>::init(6, 4, 2, &mut rng);
        p.dt_proj_bias = Tensor::full(&[6], softplus_inverse(0.01));
        let si = ssm_parameterize(&Tensor::zeros(&[5, 6]), &p).unwrap();
        assert!(si.delta.data().iter().all(|&v| (v - 0.01).abs() < 1e-15));
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SsmParams::<f64>::init(8, 3, 1, &mut rng);
        let x = Tensor::from_fn(&[7, 8], |i| (i as f64 * 0.37).sin());
        let si = ssm_parameterize(&x, &p).unwrap();
        assert_eq!(si.delta.shape(), &[7, 8]);
        assert_eq!(si.b.shape(), &[7, 3]);
        assert_eq!(si.c.shape(), &[7, 3]);
    }

    #[test]
    fn delta_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SsmParams::<f64>::init(4, 2, 1, &mut rng);
        for _ in 0..1000 {
            let x = Tensor::from_fn(&[1, 4], |_| rng.gen_range(-20.0..20.0));
            let si = ssm_parameterize(&x, &p).unwrap();
            assert!(si.delta.data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn a_is_strictly_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SsmParams::<f32>::init(5, 16, 1, &mut rng);
        let a = p.a();
        assert!(a.iter().all(|&v| v < 0.0));
        assert_eq!(a[0], -1.0);
        assert!((a[15] + 16.0).abs() < 1e-5);
    }

    #[test]
    fn init_dt_bias_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bias = init_dt_bias::<f64, _>(200, 1e-3, 1e-1, &mut rng);
        for &b in bias.data() {
            let dt = softplus(b);
            assert!((1e-3 - 1e-12..=1e-1 + 1e-12).contains(&dt));
        }
    }
}
