//! The selective scan as a differentiable tape primitive.

use std::rc::Rc;

use super::scan::{ScanEvaluator, ScanView};
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Inputs of [`selective_scan`] as tape handles. `a_log` holds `log(−A)`.
#[derive(Clone, Copy, Debug)]
pub struct ScanVars {
    pub u: Var,
    pub delta: Var,
    pub a_log: Var,
    pub b: Var,
    pub c: Var,
    pub d_skip: Option<Var>,
}

/// Records a selective scan. Every `h_t` is kept for the reverse sweep,
/// which is shared by both evaluators.
pub fn selective_scan<T: Scalar>(
    tape: &Tape<T>,
    vars: ScanVars,
    evaluator: ScanEvaluator,
) -> Result<Var> {
    let u = tape.value(vars.u);
    let delta = tape.value(vars.delta);
    let a_log = tape.value(vars.a_log);
    let b = tape.value(vars.b);
    let c = tape.value(vars.c);
    let d_skip = vars.d_skip.map(|v| tape.value(v));
    if delta.data().iter().any(|&v| v <= T::zero()) {
        return Err(Error::InvalidArgument("delta must be strictly positive".into()));
    }
    let a: Rc<Vec<T>> = Rc::new(a_log.data().iter().map(|&v| -v.exp()).collect());
    let view = ScanView::new(&u, &delta, &a, &b, &c, d_skip.as_deref())?;
    let needs_grad = [vars.u, vars.delta, vars.a_log, vars.b, vars.c]
        .into_iter()
        .chain(vars.d_skip)
        .any(|v| tape.requires_grad(v));
    let (z, states) = view.run(evaluator, needs_grad);
    let (len, channels) = (view.len, view.channels);
    let out = Tensor::from_vec2(len, channels, z)?;

    let mut parents = vec![vars.u, vars.delta, vars.a_log, vars.b, vars.c];
    parents.extend(vars.d_skip);
    let states = states.unwrap_or_default();
    tape.record(
        "selective_scan",
        &parents,
        out,
        Box::new(move |g, _| {
            let view = ScanView::new(&u, &delta, &a, &b, &c, d_skip.as_deref())?;
            let grads = view.backward(&states, g.data());
            let g_alog: Vec<T> = grads.a.iter().zip(a.iter()).map(|(&ga, &av)| ga * av).collect();
            let mut out = vec![
                Some(Tensor::new(u.shape().to_vec(), grads.u)?),
                Some(Tensor::new(delta.shape().to_vec(), grads.delta)?),
                Some(Tensor::new(a_log.shape().to_vec(), g_alog)?),
                Some(Tensor::new(b.shape().to_vec(), grads.b)?),
                Some(Tensor::new(c.shape().to_vec(), grads.c)?),
            ];
            if d_skip.is_some() {
                out.push(Some(Tensor::new(vec![grads.d_skip.len()], grads.d_skip)?));
            }
            Ok(out)
        }),
    )
}
