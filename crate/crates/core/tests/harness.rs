//! Pair sampling, the training loop, checkpoints and config handling.

use avsep::config::{CorpusCounts, MaskKind, Preset, TrainConfig};
use avsep::corpus::{generate_clips, Clip, Split};
use avsep::eval::class_probabilities;
use avsep::mixing::{mix_pair, sample_mix_pair};
use avsep::{AvError, Model, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> TrainConfig {
    TrainConfig {
        preset: Preset::Tiny,
        classes: 3,
        batch_size: 2,
        steps: 6,
        seed,
        corpus: CorpusCounts { train: 4, val: 1, test: 2, duets: 10 },
        filter_len: 4,
        eval_mixtures: 4,
        ..TrainConfig::default()
    }
}

fn clips(cfg: &TrainConfig) -> Vec<Clip> {
    generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, cfg.seed).unwrap()
}

#[test]
fn sampled_pairs_are_class_disjoint_and_exact_sums() {
    let cfg = tiny(2);
    let clips = clips(&cfg);
    let pool: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].split == Split::Train).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let item = sample_mix_pair(&clips, &pool, 0.5, &mut rng).unwrap();
        let [a, b] = item.clips;
        assert_ne!(a, b);
        assert!(clips[a].classes.iter().all(|c| !clips[b].classes.contains(c)));
        assert!(item.gain > 0.0 && item.gain <= 1.0);
        for (i, m) in item.mixture.samples.iter().enumerate() {
            let sum: f64 = item.sources.iter().map(|s| s.stem.samples[i]).sum();
            assert_eq!(*m, sum);
        }
        assert!(item.mixture.peak() <= 1.0 + 1e-12);
    }
    let draw = |seed| sample_mix_pair(&clips, &pool, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    assert_eq!(draw(9), draw(9));
}

#[test]
fn pairing_fails_without_a_disjoint_partner() {
    let cfg = tiny(3);
    let clips = clips(&cfg);
    let same: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].classes == [0]).take(3).collect();
    let err = sample_mix_pair(&clips, &same, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(err.to_string().contains("class-disjoint"), "{err}");
    assert!(sample_mix_pair(&clips, &same[..1], 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn loud_pairs_are_scaled_below_clipping() {
    let cfg = tiny(4);
    let clips = clips(&cfg);
    let duets: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].is_duet()).collect();
    let solo = (0..clips.len()).find(|&i| !clips[duets[0]].classes.contains(&clips[i].classes[0])).unwrap();
    let item = mix_pair(&clips, duets[0], solo);
    assert_eq!(item.sources.len(), 3);
    assert!(item.mixture.peak() <= 1.0 + 1e-12);
    assert_eq!(item.sources.iter().map(|s| s.slot).collect::<Vec<_>>(), [0, 0, 1]);
}

#[test]
fn fixed_batch_loss_goes_down() {
    let cfg = TrainConfig { lr: 0.05, batch_size: 4, ..tiny(5) };
    let clips = clips(&cfg);
    let mut t = Trainer::new(&cfg, &clips).unwrap();
    let items = t.sample_batch().unwrap();
    let batch = t.prepare(&items).unwrap();
    let losses: Vec<f64> = (0..50).map(|_| t.step_on(&batch).unwrap().total).collect();
    let head = losses[..5].iter().sum::<f64>() / 5.0;
    let tail = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(tail < head && losses[49] < losses[0], "first {head:.4}, last {tail:.4}");
    assert_eq!(t.steps_done(), 50);
}

#[test]
fn zero_lambda_trains_separation_only() {
    let cfg = TrainConfig { lambda: 0.0, ..tiny(6) };
    let clips = clips(&cfg);
    let mut t = Trainer::new(&cfg, &clips).unwrap();
    for _ in 0..3 {
        let r = t.step().unwrap();
        assert_eq!(r.total, r.sep_loss);
        assert!(r.c_loss1 > 0.0 && r.c_loss2 > 0.0);
    }
}

#[test]
fn runaway_learning_rate_is_reported() {
    let cfg = TrainConfig { lr: 1e30, clip_norm: None, steps: 40, ..tiny(7) };
    let clips = clips(&cfg);
    let mut t = Trainer::new(&cfg, &clips).unwrap();
    match t.run(|_| {}) {
        Err(AvError::NonFiniteLoss { step, detail }) => assert!(step < 40 && !detail.is_empty()),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn runs_repeat_bit_for_bit() {
    let cfg = tiny(8);
    let clips = clips(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut histories = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let (model, history) = avsep::train(&cfg, &clips, |_| {}).unwrap();
        model.save(&dir.path().join(name)).unwrap();
        histories.push(history);
    }
    assert_eq!(histories[0], histories[1]);
    assert_eq!(histories[0].len(), cfg.steps);
    let bytes = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(bytes("a.ckpt"), bytes("b.ckpt"));
    let (_, other) = avsep::train(&tiny(9), &clips, |_| {}).unwrap();
    assert_ne!(histories[0], other);
}

#[test]
fn checkpoints_round_trip() {
    let cfg = tiny(10);
    let clips = clips(&cfg);
    let (model, _) = avsep::train(&cfg, &clips, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    model.save(&a).unwrap();
    let mut loaded = Model::<f32>::new(&cfg.arch(), 999).unwrap();
    loaded.load(&a).unwrap();
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let frames: Vec<_> = clips.iter().take(4).map(|c| &c.frame).collect();
    let p1 = class_probabilities(&model, &frames).unwrap();
    let p2 = class_probabilities(&loaded, &frames).unwrap();
    assert_eq!(p1, p2);

    let mut wrong = Model::<f32>::new(&TrainConfig { classes: 4, ..cfg.clone() }.arch(), 0).unwrap();
    let err = wrong.load(&a).unwrap_err().to_string();
    assert!(err.contains("shape"), "{err}");

    let bytes = std::fs::read(&a).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    assert!(Model::<f32>::new(&cfg.arch(), 0).unwrap().load(&cut).is_err());
}

#[test]
fn desk_checkpoint_does_not_fit_paper_model() {
    let desk = TrainConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("desk.ckpt");
    Model::<f32>::new(&desk.arch(), 1).unwrap().save(&path).unwrap();
    let mut paper = Model::<f32>::new(&TrainConfig { preset: Preset::Paper, ..desk }.arch(), 1).unwrap();
    let err = paper.load(&path).unwrap_err().to_string();
    assert!(err.contains("checkpoint shape"), "{err}");
}

#[test]
fn config_round_trips_and_validates() {
    let cfg = TrainConfig { mask: MaskKind::Ratio, k: Some(4), clip_norm: None, ..tiny(11) };
    assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    let partial = TrainConfig::from_json(r#"{"preset": "tiny", "steps": 3}"#).unwrap();
    assert_eq!((partial.preset, partial.steps, partial.lr), (Preset::Tiny, 3, 0.01));
    for bad in [
        r#"{"tau": 1.0}"#,
        r#"{"classes": 1}"#,
        r#"{"lambda": -1}"#,
        r#"{"duet_fraction": 2}"#,
        r#"{"batch_size": 0}"#,
        r#"{"k": 0}"#,
        r#"{"lr": 0}"#,
    ] {
        assert!(matches!(TrainConfig::from_json(bad), Err(AvError::Config(_))), "{bad}");
    }
    assert!(matches!(TrainConfig::from_json("{not json"), Err(AvError::Json(_))));
}
