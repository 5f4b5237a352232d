//! Finite-difference and adjoint checks for every differentiable op.

use avsep_tensor::gradcheck::op_suite;
use avsep_tensor::{Array, Graph, Mode, Result, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;

fn rand_array(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn every_op_passes_finite_differences() {
    let results = op_suite().unwrap();
    assert!(results.len() >= 38, "suite shrank to {} checks", results.len());
    for r in &results {
        assert!(r.max_rel_err < TOL, "{}: rel err {}", r.name, r.max_rel_err);
    }
}

/// `<L x, y> == <x, L^T y>` with `L^T` taken from the backward pass.
fn adjoint<F>(name: &str, in_shape: &[usize], f: F)
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    for _ in 0..3 {
        let x = rand_array(in_shape, &mut rng);
        let mut g = Graph::new(Mode::Eval, 0);
        let xv = g.variable(x.clone()).unwrap();
        let lx = f(&mut g, xv).unwrap();
        let y = rand_array(g.shape(lx), &mut rng);
        let lhs = g.value(lx).dot(&y);
        let yv = g.input(y).unwrap();
        let prod = g.mul(lx, yv).unwrap();
        let s = g.sum(prod).unwrap();
        let lty = g.backward(s).unwrap().wrt(xv).unwrap().clone();
        let rhs = x.dot(&lty);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{name}: {lhs} vs {rhs}");
    }
}

#[test]
fn linear_ops_are_adjoint_to_their_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = rand_array(&[4, 3, 3, 3], &mut rng);
    let wt = rand_array(&[3, 2, 2, 2], &mut rng);
    let gate = rand_array(&[2, 1, 4, 4], &mut rng);
    let p = rand_array(&[2, 3, 2, 4], &mut rng);
    let m = rand_array(&[3, 3], &mut rng);
    adjoint("conv2d", &[2, 3, 5, 5], |g, x| {
        let wv = g.input(w.clone())?;
        g.conv2d(x, wv, None, 2, 1)
    });
    adjoint("conv_transpose2d", &[2, 3, 3, 3], |g, x| {
        let wv = g.input(wt.clone())?;
        g.conv_transpose2d(x, wv, None, 2)
    });
    adjoint("upsample2", &[1, 2, 3, 3], |g, x| g.upsample2(x));
    adjoint("spatial_mean", &[2, 3, 4, 4], |g, x| g.spatial_mean(x));
    adjoint("mul_broadcast", &[2, 3, 4, 4], |g, x| {
        let gv = g.input(gate.clone())?;
        g.mul_broadcast(x, gv)
    });
    adjoint("concat", &[2, 2, 2, 2], |g, x| g.concat(&[x, x]));
    adjoint("gather_rows", &[4, 3], |g, x| g.gather_rows(x, &[3, 3, 0]));
    adjoint("select_channels", &[2, 3, 2, 2], |g, x| g.select_channels(x, &[(0, 1), (1, 1), (0, 1)]));
    adjoint("basis_combine/p", &[2, 3, 2, 4], |g, x| {
        let mv = g.input(m.clone())?;
        g.basis_combine(x, mv, &[0, 1, 1])
    });
    adjoint("basis_combine/m", &[3, 3], |g, x| {
        let pv = g.input(p.clone())?;
        g.basis_combine(pv, x, &[0, 1, 1])
    });
    adjoint("scale", &[5], |g, x| g.scale(x, 0.3));
}

#[test]
fn fan_out_accumulates_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_array(&[10], &mut rng);
    let a = rand_array(&[10], &mut rng);
    let b = rand_array(&[10], &mut rng);
    let grad = |use_a: bool, use_b: bool| {
        let mut g = Graph::new(Mode::Eval, 0);
        let xv = g.variable(x.clone()).unwrap();
        let y = g.relu(xv).unwrap();
        let mut terms = Vec::new();
        for (on, w) in [(use_a, &a), (use_b, &b)] {
            if on {
                let wv = g.input(w.clone()).unwrap();
                let p = g.mul(y, wv).unwrap();
                terms.push(g.sum(p).unwrap());
            }
        }
        let loss = if terms.len() == 2 { g.add(terms[0], terms[1]).unwrap() } else { terms[0] };
        g.backward(loss).unwrap().wrt(xv).unwrap().clone()
    };
    let both = grad(true, true);
    let (ga, gb) = (grad(true, false), grad(false, true));
    for i in 0..10 {
        assert_eq!(both.data()[i], ga.data()[i] + gb.data()[i]);
    }
}

#[test]
fn identical_seeds_are_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut g = Graph::new(Mode::Train, 99);
        let x = g.variable(rand_array(&[2, 3, 6, 6], &mut rng)).unwrap();
        let w = g.variable(rand_array(&[4, 3, 3, 3], &mut rng)).unwrap();
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.dropout(y, 0.3).unwrap();
        let y = g.relu(y).unwrap();
        let s = g.mean(y).unwrap();
        let grads = g.backward(s).unwrap();
        (g.value(s).clone(), grads.wrt(x).unwrap().clone(), grads.wrt(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn spatial_normalize_planes_sum_to_one(vals in proptest::collection::vec(-5.0f64..5.0, 2 * 3 * 16)) {
        let mut g = Graph::new(Mode::Eval, 0);
        let x = g.input(Array::new([2, 3, 4, 4], vals).unwrap()).unwrap();
        let r = g.relu(x).unwrap();
        let y = g.spatial_normalize(r, 1e-8).unwrap();
        for plane in g.value(y).data().chunks(16) {
            let s: f64 = plane.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(plane.iter().all(|&v| v >= 0.0));
        }
    }
}
