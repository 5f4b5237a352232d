//! Mask composition, ground-truth masks, separation losses and basis
//! sharing across objects of a mixture.

use avsep::config::{MaskKind, Preset, TrainConfig};
use avsep::fusion::{compose_mask, fuse_features, gt_binary_mask, gt_mask, gt_ratio_mask, separation_loss, GtMask};
use avsep::model::{BatchInput, Model, Object};
use avsep_dsp::Grid;
use avsep_tensor::{Array, Graph, Mode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn rand_array(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::from_fn(shape.to_vec(), |_| rng.gen_range(-2.0..2.0))
}

fn rand_grid(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Grid {
    Grid::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0))
}

#[test]
fn zero_coefficients_give_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let p = g.input(rand_array(&[1, 4, 3, 5], &mut rng)).unwrap();
    let m = g.input(Array::zeros([2, 4])).unwrap();
    let mu = compose_mask(&mut g, p, m, &[0, 0]).unwrap();
    assert_eq!(g.shape(mu), &[2, 3, 5]);
    assert!(g.value(mu).data().iter().all(|&v| v == 0.5));
}

#[test]
fn single_basis_reduces_to_sigmoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = rand_array(&[1, 1, 4, 4], &mut rng);
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let (pv, mv) = (g.input(p.clone()).unwrap(), g.input(Array::full([1, 1], 1.0)).unwrap());
    let mu = compose_mask(&mut g, pv, mv, &[0]).unwrap();
    for (a, &x) in g.value(mu).data().iter().zip(p.data()) {
        assert!((a - sigmoid(x)).abs() < 1e-15);
    }
}

#[test]
fn composition_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, k, f, n) = (2, 5, 4, 6);
    let p = rand_array(&[b, k, f, n], &mut rng);
    let m = rand_array(&[3, k], &mut rng);
    let owner = [1, 0, 1];
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let (pv, mv) = (g.input(p.clone()).unwrap(), g.input(m.clone()).unwrap());
    let mu = compose_mask(&mut g, pv, mv, &owner).unwrap();
    let out = g.value(mu).data();
    for (o, &bi) in owner.iter().enumerate() {
        for fi in 0..f {
            for t in 0..n {
                let mut z = 0.0;
                for j in 0..k {
                    z += p.data()[((bi * k + j) * f + fi) * n + t] * m.data()[o * k + j];
                }
                assert!((out[(o * f + fi) * n + t] - sigmoid(z)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn coefficient_length_mismatch_is_an_error() {
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let p = g.input(Array::zeros([1, 4, 2, 2])).unwrap();
    let m = g.input(Array::zeros([1, 3])).unwrap();
    assert!(compose_mask(&mut g, p, m, &[0]).is_err());
}

#[test]
fn increasing_a_coefficient_moves_the_mask_with_the_basis_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = rand_array(&[1, 3, 4, 4], &mut rng);
    let m = rand_array(&[1, 3], &mut rng);
    let eval = |m: &Array<f64>| {
        let mut g = Graph::<f64>::new(Mode::Eval, 0);
        let (pv, mv) = (g.input(p.clone()).unwrap(), g.input(m.clone()).unwrap());
        let mu = compose_mask(&mut g, pv, mv, &[0]).unwrap();
        g.value(mu).clone()
    };
    let before = eval(&m);
    for j in 0..3 {
        let mut m2 = m.clone();
        m2.data_mut()[j] += 0.5;
        let after = eval(&m2);
        for i in 0..16 {
            let pj = p.data()[j * 16 + i];
            let d = after.data()[i] - before.data()[i];
            assert!(if pj > 0.0 { d >= 0.0 } else { d <= 0.0 });
        }
    }
}

#[test]
fn fusion_puts_the_visual_block_first() {
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let v = g.input(Array::full([2, 64], 1.0)).unwrap();
    let a = g.input(Array::full([2, 128], 2.0)).unwrap();
    let f = fuse_features(&mut g, v, a).unwrap();
    assert_eq!(g.shape(f), &[2, 192]);
    let row = &g.value(f).data()[..192];
    assert!(row[..64].iter().all(|&x| x == 1.0) && row[64..].iter().all(|&x| x == 2.0));
}

#[test]
fn binary_mask_cases() {
    let t = Grid::new(1, 3, vec![3.0, 5.0, 2.0]).unwrap();
    let o = Grid::new(1, 3, vec![4.0, 1.0, 2.0]).unwrap();
    assert_eq!(gt_binary_mask(&t, &[&o]).data, vec![0.0, 1.0, 1.0]);
    assert_eq!(gt_binary_mask(&t, &[&t]).data, vec![1.0; 3]);
    assert_eq!(gt_binary_mask(&t, &[]).data, vec![1.0; 3]);
}

#[test]
fn ratio_mask_cases() {
    let a = Grid::full(2, 2, 0.7);
    let m = gt_ratio_mask(&a, &[&a, &a]);
    assert!(m.data.iter().all(|&v| (v - 0.5).abs() < 1e-7));
    let m = gt_ratio_mask(&a, &[&a]);
    assert!(m.data.iter().all(|&v| (v - 1.0).abs() < 1e-7 && v <= 1.0));
}

proptest! {
    #[test]
    fn binary_masks_partition_bins(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_grid(4, 5, &mut rng);
        let mut b = rand_grid(4, 5, &mut rng);
        b.data[3] = a.data[3];
        let m1 = gt_mask(MaskKind::Binary, &a, &[&a, &b], 0).grid;
        let m2 = gt_mask(MaskKind::Binary, &b, &[&a, &b], 1).grid;
        for i in 0..20 {
            let s = m1.data[i] + m2.data[i];
            prop_assert!(s == 1.0 || (s == 2.0 && a.data[i] == b.data[i]));
        }
        prop_assert_eq!(m1.data[3] + m2.data[3], 2.0);
    }

    #[test]
    fn ratio_masks_sum_below_one(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let srcs: Vec<Grid> = (0..3).map(|_| rand_grid(3, 4, &mut rng)).collect();
        let refs: Vec<&Grid> = srcs.iter().collect();
        for i in 0..12 {
            let total: f64 = (0..3).map(|j| gt_ratio_mask(&srcs[j], &refs).data[i]).sum();
            let energy: f64 = srcs.iter().map(|s| s.data[i]).sum();
            prop_assert!(total <= 1.0);
            prop_assert!((total - energy / (energy + 1e-8)).abs() < 1e-12);
        }
    }
}

fn loss_of(logits: &Array<f64>, gt: &[GtMask], kind: MaskKind) -> f64 {
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let z = g.input(logits.clone()).unwrap();
    let l = separation_loss(&mut g, z, gt, kind).unwrap();
    g.value(l).item()
}

#[test]
fn separation_loss_values() {
    let gt_bin = vec![GtMask { kind: MaskKind::Binary, grid: Grid::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap() }];
    assert!((loss_of(&Array::zeros([1, 2, 2]), &gt_bin, MaskKind::Binary) - 2f64.ln()).abs() < 1e-12);

    let target = Grid::new(1, 3, vec![0.2, 0.5, 0.9]).unwrap();
    let logits = Array::new([1, 1, 3], target.data.iter().map(|p| (p / (1.0 - p)).ln()).collect()).unwrap();
    let gt_ratio = vec![GtMask { kind: MaskKind::Ratio, grid: target }];
    assert!(loss_of(&logits, &gt_ratio, MaskKind::Ratio) < 1e-12);

    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let z = g.input(Array::zeros([1, 2, 2])).unwrap();
    assert!(separation_loss(&mut g, z, &gt_bin, MaskKind::Ratio).is_err());
}

#[test]
fn separation_loss_matches_direct_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = rand_array(&[2, 3, 4], &mut rng);
    let bin: Vec<GtMask> = (0..2)
        .map(|_| GtMask { kind: MaskKind::Binary, grid: Grid::from_fn(3, 4, |_, _| f64::from(rng.gen_bool(0.5))) })
        .collect();
    let ratio: Vec<GtMask> =
        (0..2).map(|_| GtMask { kind: MaskKind::Ratio, grid: rand_grid(3, 4, &mut rng) }).collect();
    let flat = |gt: &[GtMask]| -> Vec<f64> { gt.iter().flat_map(|m| m.grid.data.clone()).collect() };
    let (yb, yr) = (flat(&bin), flat(&ratio));
    let mut bce = 0.0;
    let mut l1 = 0.0;
    for (i, &z) in logits.data().iter().enumerate() {
        let p = sigmoid(z);
        bce += -(yb[i] * p.ln() + (1.0 - yb[i]) * (1.0 - p).ln());
        l1 += (p - yr[i]).abs();
    }
    assert!((loss_of(&logits, &bin, MaskKind::Binary) - bce / 24.0).abs() < 1e-9);
    assert!((loss_of(&logits, &ratio, MaskKind::Ratio) - l1 / 24.0).abs() < 1e-12);
}

#[test]
fn bases_are_computed_once_per_batch() {
    let cfg = TrainConfig { preset: Preset::Tiny, classes: 3, ..TrainConfig::default() };
    let model = Model::<f64>::new(&cfg.arch(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let input = BatchInput {
        frames: Array::from_fn([4, 3, 16, 16], |_| rng.gen_range(0.0..1.0)),
        specs: Array::from_fn([2, 1, 8, 8], |_| rng.gen_range(0.0..4.0)),
        objects: vec![
            Object { frame: 0, class: 0, mixture: 0 },
            Object { frame: 1, class: 2, mixture: 0 },
            Object { frame: 1, class: 1, mixture: 0 },
            Object { frame: 2, class: 1, mixture: 1 },
            Object { frame: 3, class: 0, mixture: 1 },
        ],
    };
    let before = model.unet.forward_calls();
    let mut g = Graph::with_params(&model.store, Mode::Eval, 0);
    let fwd = model.forward(&mut g, &input).unwrap();
    assert_eq!(model.unet.forward_calls() - before, 1);
    assert_eq!(g.shape(fwd.coefs), &[5, 3]);
    assert_eq!(g.shape(fwd.logits), &[5, 8, 8]);

    // objects sharing a mixture and coefficients share a mask: rebuild the
    // second object's logits from the shared bases by hand
    let (bases, coefs) = (g.value(fwd.bases).clone(), g.value(fwd.coefs).clone());
    for i in 0..64 {
        let z: f64 = (0..3).map(|j| bases.data()[j * 64 + i] * coefs.data()[3 + j]).sum();
        assert!((g.value(fwd.logits).data()[64 + i] - z).abs() < 1e-12);
    }
}
