//! Finite-difference checks of every differentiable op at small random
//! points, with respect to each of its differentiable inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grad_check_in;
use crate::array::Array;
use crate::error::Result;
use crate::graph::{BatchNormArgs, Graph, Mode, Reduction, Var};
use crate::params::{ParamKind, ParamStore};

/// Perturbation used by the suite.
pub const SUITE_STEP: f64 = 1e-6;
/// Random points per check.
pub const SUITE_POINTS: usize = 5;

/// Worst relative error of one op/input pair over all points.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
}

fn rand_array(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Reduces `y` to a scalar through a fixed random projection so every output
/// coordinate contributes a distinct weight.
fn project(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_array(g.shape(y), &mut rng);
    let r = g.input(r)?;
    let p = g.mul(y, r)?;
    g.sum(p)
}

struct Suite {
    out: Vec<OpCheck>,
    store: ParamStore<f64>,
}

impl Suite {
    fn run<F>(&mut self, name: &str, shape: &[usize], mode: Mode, f: F) -> Result<()>
    where
        F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum::<u64>() * 7919);
        let mut worst = 0.0f64;
        for _ in 0..SUITE_POINTS {
            let theta = rand_array(shape, &mut rng);
            worst = worst.max(grad_check_in(&self.store, mode, &f, &theta, SUITE_STEP)?);
        }
        self.out.push(OpCheck { name: name.to_string(), max_rel_err: worst });
        Ok(())
    }

    fn check<F>(&mut self, name: &str, shape: &[usize], f: F) -> Result<()>
    where
        F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
    {
        self.run(name, shape, Mode::Train, f)
    }
}

/// Runs every op check in 64-bit precision.
pub fn op_suite() -> Result<Vec<OpCheck>> {
    let mut s = Suite { out: Vec::new(), store: ParamStore::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let w = rand_array(&[3, 2, 3, 3], &mut rng);
    let x = rand_array(&[2, 2, 5, 5], &mut rng);
    let b = rand_array(&[3], &mut rng);
    s.check("conv2d/input", &[2, 2, 5, 5], |g, xv| {
        let (wv, bv) = (g.input(w.clone())?, g.input(b.clone())?);
        let y = g.conv2d(xv, wv, Some(bv), 2, 1)?;
        project(g, y, 10)
    })?;
    s.check("conv2d/kernel", &[3, 2, 3, 3], |g, wv| {
        let (xv, bv) = (g.input(x.clone())?, g.input(b.clone())?);
        let y = g.conv2d(xv, wv, Some(bv), 1, 1)?;
        project(g, y, 11)
    })?;
    s.check("conv2d/bias", &[3], |g, bv| {
        let (xv, wv) = (g.input(x.clone())?, g.input(w.clone())?);
        let y = g.conv2d(xv, wv, Some(bv), 2, 0)?;
        project(g, y, 12)
    })?;

    let w = rand_array(&[3, 2, 2, 2], &mut rng);
    let x = rand_array(&[2, 3, 3, 3], &mut rng);
    s.check("conv_transpose2d/input", &[2, 3, 3, 3], |g, xv| {
        let wv = g.input(w.clone())?;
        let y = g.conv_transpose2d(xv, wv, None, 2)?;
        project(g, y, 20)
    })?;
    s.check("conv_transpose2d/kernel", &[3, 2, 2, 2], |g, wv| {
        let xv = g.input(x.clone())?;
        let y = g.conv_transpose2d(xv, wv, None, 2)?;
        project(g, y, 21)
    })?;
    s.check("conv_transpose2d/bias", &[2], |g, bv| {
        let (xv, wv) = (g.input(x.clone())?, g.input(w.clone())?);
        let y = g.conv_transpose2d(xv, wv, Some(bv), 1)?;
        project(g, y, 22)
    })?;

    let shape = [2, 3, 2, 2];
    let other = rand_array(&shape, &mut rng);
    s.check("relu", &shape, |g, x| {
        let y = g.relu(x)?;
        project(g, y, 30)
    })?;
    s.check("sigmoid", &shape, |g, x| {
        let y = g.sigmoid(x)?;
        project(g, y, 31)
    })?;
    s.check("add", &shape, |g, x| {
        let o = g.input(other.clone())?;
        let y = g.add(x, o)?;
        project(g, y, 32)
    })?;
    s.check("sub", &shape, |g, x| {
        let o = g.input(other.clone())?;
        let y = g.sub(o, x)?;
        project(g, y, 33)
    })?;
    s.check("mul", &shape, |g, x| {
        let o = g.input(other.clone())?;
        let y = g.mul(x, o)?;
        let y = g.mul(y, x)?;
        project(g, y, 34)
    })?;
    s.check("scale", &shape, |g, x| {
        let y = g.scale(x, -1.7)?;
        project(g, y, 35)
    })?;
    let gate = rand_array(&[2, 1, 2, 2], &mut rng);
    let x = rand_array(&shape, &mut rng);
    s.check("mul_broadcast/input", &shape, |g, xv| {
        let gv = g.input(gate.clone())?;
        let y = g.mul_broadcast(xv, gv)?;
        project(g, y, 36)
    })?;
    s.check("mul_broadcast/gate", &[2, 1, 2, 2], |g, gv| {
        let xv = g.input(x.clone())?;
        let y = g.mul_broadcast(xv, gv)?;
        project(g, y, 37)
    })?;
    s.check("dropout", &shape, |g, x| {
        let y = g.dropout(x, 0.5)?;
        project(g, y, 38)
    })?;

    let rm = s.store.add("running_mean", Array::new([3], vec![0.1, -0.2, 0.3])?, ParamKind::Buffer)?;
    let rv = s.store.add("running_var", Array::new([3], vec![0.5, 1.5, 2.0])?, ParamKind::Buffer)?;
    let gamma = rand_array(&[3], &mut rng);
    let beta = rand_array(&[3], &mut rng);
    let x = rand_array(&[2, 3, 2, 3], &mut rng);
    for (mode, tag) in [(Mode::Train, "train"), (Mode::Eval, "eval")] {
        for which in 0..3 {
            let shape: &[usize] = if which == 0 { &[2, 3, 2, 3] } else { &[3] };
            let input = ["input", "gamma", "beta"][which];
            s.run(&format!("batch_norm/{tag}/{input}"), shape, mode, |g, v| {
                let xv = if which == 0 { v } else { g.input(x.clone())? };
                let gm = if which == 1 { v } else { g.input(gamma.clone())? };
                let bt = if which == 2 { v } else { g.input(beta.clone())? };
                let args =
                    BatchNormArgs { gamma: gm, beta: bt, running_mean: rm, running_var: rv, momentum: 0.1, eps: 1e-5 };
                let y = g.batch_norm(xv, &args)?;
                project(g, y, 40)
            })?;
        }
    }

    let shape = [2, 3, 4, 4];
    s.check("spatial_mean", &shape, |g, x| {
        let y = g.spatial_mean(x)?;
        project(g, y, 50)
    })?;
    s.check("max_pool2", &shape, |g, x| {
        let y = g.max_pool2(x)?;
        project(g, y, 51)
    })?;
    s.check("upsample2", &shape, |g, x| {
        let y = g.upsample2(x)?;
        project(g, y, 52)
    })?;
    let w = Array::from_fn([2, 1, 4, 4], |_| rng.gen_range(0.1..1.0));
    let x = rand_array(&shape, &mut rng);
    s.check("weighted_pool/input", &shape, |g, xv| {
        let wv = g.input(w.clone())?;
        let y = g.weighted_pool(xv, wv, 1e-8)?;
        project(g, y, 53)
    })?;
    s.check("weighted_pool/weights", &[2, 1, 4, 4], |g, wv| {
        let xv = g.input(x.clone())?;
        // squared so the weights stay positive under perturbation
        let wv = g.mul(wv, wv)?;
        let y = g.weighted_pool(xv, wv, 1e-8)?;
        project(g, y, 54)
    })?;
    s.check("spatial_normalize", &shape, |g, x| {
        let pos = g.mul(x, x)?;
        let y = g.spatial_normalize(pos, 1e-8)?;
        project(g, y, 55)
    })?;

    let other = rand_array(&[2, 1, 3, 3], &mut rng);
    s.check("concat", &[2, 2, 3, 3], |g, x| {
        let o = g.input(other.clone())?;
        let y = g.concat(&[o, x, x])?;
        project(g, y, 60)
    })?;
    s.check("gather_rows", &[3, 4], |g, x| {
        let y = g.gather_rows(x, &[2, 0, 2, 1])?;
        project(g, y, 61)
    })?;
    s.check("select_channels", &[2, 3, 2, 2], |g, x| {
        let y = g.select_channels(x, &[(1, 2), (0, 0), (1, 2)])?;
        project(g, y, 62)
    })?;
    s.check("reshape", &[2, 6], |g, x| {
        let y = g.reshape(x, &[3, 4])?;
        let y = g.sigmoid(y)?;
        project(g, y, 63)
    })?;
    let m = rand_array(&[3, 4], &mut rng);
    let p = rand_array(&[2, 4, 3, 2], &mut rng);
    s.check("basis_combine/bases", &[2, 4, 3, 2], |g, pv| {
        let mv = g.input(m.clone())?;
        let y = g.basis_combine(pv, mv, &[1, 0, 1])?;
        project(g, y, 64)
    })?;
    s.check("basis_combine/coefficients", &[3, 4], |g, mv| {
        let pv = g.input(p.clone())?;
        let y = g.basis_combine(pv, mv, &[1, 0, 1])?;
        project(g, y, 65)
    })?;

    let target: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
    s.check("bce_with_logits/sum", &[3, 4], |g, x| g.bce_with_logits(x, &target, Reduction::Sum))?;
    s.check("bce_with_logits/mean", &[3, 4], |g, x| {
        let y = g.scale(x, 3.0)?;
        g.bce_with_logits(y, &target, Reduction::Mean)
    })?;
    s.check("l1_loss", &[3, 4], |g, x| {
        let y = g.sigmoid(x)?;
        g.l1_loss(y, &target)
    })?;
    s.check("sum", &[3, 4], |g, x| {
        let y = g.mul(x, x)?;
        g.sum(y)
    })?;
    s.check("mean", &[3, 4], |g, x| {
        let y = g.mul(x, x)?;
        g.mean(y)
    })?;
    Ok(s.out)
}
