//! Central finite-difference gradient checks in 64-bit precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::error::{arg_err, Result, TensorError};
use crate::graph::{Graph, Mode, Var};
use crate::params::ParamStore;

mod suite;
pub use suite::{op_suite, OpCheck, SUITE_POINTS, SUITE_STEP};

/// Seed used for every evaluation, so stochastic ops (dropout) draw the same
/// masks on each perturbed pass.
const PASS_SEED: u64 = 0x6772_6164;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TensorError::NonFinite { op: "grad_check" })
    }
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`
/// for the scalar `f(theta)`.
pub fn grad_check<F>(f: F, theta: &Array<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    grad_check_in(&ParamStore::new(), Mode::Train, f, theta, step)
}

/// [`grad_check`] on a graph over `store` (for ops that read buffers such as
/// running statistics) in the given mode.
pub fn grad_check_in<F>(store: &ParamStore<f64>, mode: Mode, f: F, theta: &Array<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    let eval = |t: &Array<f64>| -> Result<f64> {
        let mut g = Graph::with_params(store, mode, PASS_SEED);
        let x = g.input(t.clone())?;
        let y = f(&mut g, x)?;
        finite(g.value(y).item())
    };
    let mut g = Graph::with_params(store, mode, PASS_SEED);
    let x = g.variable(theta.clone())?;
    let y = f(&mut g, x)?;
    finite(g.value(y).item())?;
    let grads = g.backward(y)?;
    let zeros = Array::zeros(theta.shape().to_vec());
    let analytic = grads.wrt(x).unwrap_or(&zeros);
    let mut worst = 0.0f64;
    let mut t = theta.clone();
    for i in 0..theta.len() {
        let orig = t.data()[i];
        t.data_mut()[i] = orig + step;
        let up = eval(&t)?;
        t.data_mut()[i] = orig - step;
        let down = eval(&t)?;
        t.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * step)));
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Checks the gradient of `f` with respect to every trainable parameter.
///
/// With `per_tensor = Some(n)`, at most `n` randomly chosen coordinates of
/// each parameter tensor are perturbed.
pub fn grad_check_params<F>(
    store: &mut ParamStore<f64>,
    f: F,
    step: f64,
    per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(arg_err("grad_check", "step must be positive"));
    }
    let analytic: Vec<(usize, Array<f64>)> = {
        let mut g = Graph::with_params(store, Mode::Train, PASS_SEED);
        let y = f(&mut g)?;
        finite(g.value(y).item())?;
        let grads = g.backward(y)?;
        store
            .trainable_ids()
            .map(|id| {
                let ga = grads.param(id).cloned().unwrap_or_else(|| Array::zeros(store.get(id).shape().to_vec()));
                (id.index(), ga)
            })
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.trainable_ids().collect();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_param: String::new(), coords_checked: 0 };
    for (id, (_, ga)) in ids.into_iter().zip(analytic) {
        let n = store.get(id).len();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.get(id).data()[i];
            let eval = |v: f64, store: &mut ParamStore<f64>| -> Result<f64> {
                store.get_mut(id).data_mut()[i] = v;
                let mut g = Graph::with_params(store, Mode::Train, PASS_SEED);
                let y = f(&mut g)?;
                finite(g.value(y).item())
            };
            let up = eval(orig + step, store)?;
            let down = eval(orig - step, store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let e = rel_err(ga.data()[i], (up - down) / (2.0 * step));
            report.coords_checked += 1;
            if e > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst_param = store.entry(id).name.clone();
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let theta = Array::from_fn([7], |i| i as f64 * 0.3 - 1.0);
        let err = grad_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                g.sum(sq)
            },
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let theta = Array::from_fn([2], |_| 1.0);
        let r = grad_check(|g, x| {
            let s = g.scale(x, f64::INFINITY)?;
            g.sum(s)
        }, &theta, 1e-5);
        assert!(matches!(r, Err(TensorError::NonFinite { .. })));
    }
}
