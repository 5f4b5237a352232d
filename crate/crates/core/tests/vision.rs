//! Class attention, scores, the classification loss and detection.

use avsep::config::TrainConfig;
use avsep::vision::{c_loss, combine_and_score, detect_objects, pooled_visual_feature, sigmoid, VisionNet};
use avsep_tensor::{Array, Graph, Mode, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

fn desk_vision() -> (ParamStore<f64>, VisionNet) {
    let arch = TrainConfig::default().arch();
    let mut store = ParamStore::new();
    let net = VisionNet::new(&mut store, &arch, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    (store, net)
}

#[test]
fn expansive_channels_are_distributions() {
    let (store, net) = desk_vision();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..20 {
        let mode = if trial % 2 == 0 { Mode::Train } else { Mode::Eval };
        let mut g = Graph::with_params(&store, mode, trial);
        let frames = g.input(rand_array(&[2, 3, 64, 64], 0.0, 1.0, &mut rng)).unwrap();
        let out = net.forward(&mut g, frames).unwrap();
        assert_eq!(g.shape(out.features), &[2, 64, 8, 8]);
        assert_eq!(g.shape(out.expansive), &[2, 4, 8, 8]);
        for plane in g.value(out.expansive).data().chunks(64) {
            assert!(plane.iter().all(|&v| v >= 0.0));
            assert!((plane.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn combined_map_and_scores_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (b, c, h, w) = (2, 3, 4, 5);
    let e = rand_array(&[b, c, h, w], 0.0, 1.0, &mut rng);
    let d = rand_array(&[b, c, h, w], -3.0, 3.0, &mut rng);
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let (ev, dv) = (g.input(e.clone()).unwrap(), g.input(d.clone()).unwrap());
    let (combined, scores) = combine_and_score(&mut g, ev, dv).unwrap();
    let (xm, s) = (g.value(combined).data(), g.value(scores).data());
    for bi in 0..b {
        for ci in 0..c {
            let mut acc = 0.0;
            for i in 0..h * w {
                let idx = (bi * c + ci) * h * w + i;
                assert_eq!(xm[idx], e.data()[idx] * d.data()[idx]);
                acc += e.data()[idx] * d.data()[idx];
            }
            assert!((s[bi * c + ci] - acc / (h * w) as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn score_special_cases() {
    let (h, w) = (3, 3);
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let uniform = g.input(Array::full([1, 1, h, w], 1.0 / 9.0)).unwrap();
    let ones = g.input(Array::full([1, 1, h, w], 1.0)).unwrap();
    let (_, s) = combine_and_score(&mut g, uniform, ones).unwrap();
    assert!((g.value(s).item() - 1.0 / 9.0).abs() < 1e-15);

    let mut onehot = Array::zeros([1, 1, h, w]);
    onehot.data_mut()[4] = 1.0;
    let d = Array::from_fn([1, 1, h, w], |i| i as f64 - 2.0);
    let (ov, dv) = (g.input(onehot).unwrap(), g.input(d.clone()).unwrap());
    let (_, s) = combine_and_score(&mut g, ov, dv).unwrap();
    assert!((g.value(s).item() - d.data()[4] / 9.0).abs() < 1e-15);
}

#[test]
fn c_loss_values() {
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let zero = g.input(Array::zeros([2, 4])).unwrap();
    let l = c_loss(&mut g, zero, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert!((g.value(l).item() - 4.0 * 2f64.ln()).abs() < 1e-12);

    let big = g.input(Array::new([1, 2], vec![60.0, -60.0]).unwrap()).unwrap();
    let l = c_loss(&mut g, big, &[1.0, 0.0]).unwrap();
    assert!(g.value(l).item() < 1e-20);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = rand_array(&[3, 4], -4.0, 4.0, &mut rng);
    let y: Vec<f64> = (0..12).map(|_| f64::from(rng.gen_bool(0.5))).collect();
    let sv = g.input(s.clone()).unwrap();
    let l = c_loss(&mut g, sv, &y).unwrap();
    let direct: f64 = s
        .data()
        .iter()
        .zip(&y)
        .map(|(&z, &t)| -(t * sigmoid(z).ln() + (1.0 - t) * (1.0 - sigmoid(z)).ln()))
        .sum::<f64>()
        / 3.0;
    assert!((g.value(l).item() - direct).abs() < 1e-9);
    assert!(g.value(l).item() >= 0.0);
}

#[test]
fn detection_thresholds_probabilities() {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    assert_eq!(detect_objects(&[logit(0.9), logit(0.1)], 0.3), vec![0]);
    assert!(detect_objects(&[logit(0.9), logit(0.1)], 0.95).is_empty());
    assert_eq!(detect_objects(&[0.0, 3.0, -3.0], 0.5), vec![0, 1]);
}

#[test]
fn pooled_feature_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (c_v, h, w) = (5, 3, 4);
    let feats = rand_array(&[2, c_v, h, w], -1.0, 1.0, &mut rng);
    let mut attn = Array::zeros([2, 2, h, w]);
    attn.data_mut()[(1 * 2 + 1) * h * w + 7] = 0.8; // frame 1, class 1, cell 7
    for v in &mut attn.data_mut()[..h * w] {
        *v = 0.25; // frame 0, class 0 uniform
    }
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let (fv, av) = (g.input(feats.clone()).unwrap(), g.input(attn).unwrap());
    let pooled = pooled_visual_feature(&mut g, fv, av, &[(1, 1), (0, 0)]).unwrap();
    let p = g.value(pooled).data();
    for ch in 0..c_v {
        let at = feats.data()[(c_v + ch) * h * w + 7];
        assert!((p[ch] - at).abs() < 1e-6, "one-hot pick");
        let mean = feats.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64;
        assert!((p[c_v + ch] - mean).abs() < 1e-9, "uniform pick");
    }
}

#[test]
fn pooled_feature_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (c_v, h, w) = (3, 2, 3);
    let feats = rand_array(&[2, c_v, h, w], -1.0, 1.0, &mut rng);
    let attn = rand_array(&[2, 3, h, w], -0.5, 1.0, &mut rng);
    let picks = [(0, 2), (1, 0), (1, 2)];
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let (fv, av) = (g.input(feats.clone()).unwrap(), g.input(attn.clone()).unwrap());
    let pooled = pooled_visual_feature(&mut g, fv, av, &picks).unwrap();
    for (o, &(b, c)) in picks.iter().enumerate() {
        let wts: Vec<f64> = (0..h * w).map(|i| attn.data()[(b * 3 + c) * h * w + i].max(0.0)).collect();
        let total: f64 = wts.iter().sum();
        for ch in 0..c_v {
            let num: f64 = (0..h * w).map(|i| wts[i] * feats.data()[(b * c_v + ch) * h * w + i]).sum();
            let want = num / (total + avsep::vision::POOL_EPS);
            assert!((g.value(pooled).data()[o * c_v + ch] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn wrong_frame_size_is_rejected() {
    let (store, net) = desk_vision();
    let mut g = Graph::with_params(&store, Mode::Eval, 0);
    let x = g.input(Array::zeros([1, 3, 32, 32])).unwrap();
    let err = net.forward(&mut g, x).unwrap_err().to_string();
    assert!(err.contains("64"), "{err}");
}

#[test]
fn zero_frame_is_deterministic() {
    let (store, net) = desk_vision();
    let run = || {
        let mut g = Graph::with_params(&store, Mode::Eval, 0);
        let x = g.input(Array::zeros([1, 3, 64, 64])).unwrap();
        let out = net.forward(&mut g, x).unwrap();
        g.value(out.scores).clone()
    };
    assert_eq!(run(), run());
}
