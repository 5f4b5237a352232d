//! Inference, classification accuracy and separation reports.

use avsep::config::{CorpusCounts, Preset, TrainConfig};
use avsep::corpus::{generate_clips, Clip, Split};
use avsep::eval::{
    classification_csv, evaluate_classification, evaluate_oracle, evaluate_separation, separate, summary_csv,
    EvalSet, OracleMask, SeparationStatus, TAU_SWEEP,
};
use avsep::{Frontend, Model};

fn setup() -> (TrainConfig, Vec<Clip>, Model<f32>) {
    let cfg = TrainConfig {
        preset: Preset::Tiny,
        classes: 3,
        batch_size: 2,
        steps: 5,
        seed: 3,
        corpus: CorpusCounts { train: 4, val: 1, test: 3, duets: 10 },
        filter_len: 8,
        eval_mixtures: 5,
        ..TrainConfig::default()
    };
    let clips = generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, cfg.seed).unwrap();
    let (model, _) = avsep::train(&cfg, &clips, |_| {}).unwrap();
    (cfg, clips, model)
}

#[test]
fn separation_returns_one_source_per_detection() {
    let (cfg, clips, model) = setup();
    let fe = Frontend::new(&cfg.audio()).unwrap();
    let mix = &clips[clips.len() - 1].mixture;
    for clip in clips.iter().take(6) {
        for tau in [0.01, 0.3, 0.6] {
            let sep = separate(&model, &fe, &clip.frame, mix, tau).unwrap();
            let expected: Vec<usize> = (0..cfg.classes).filter(|&c| sep.probabilities[c] >= tau).collect();
            assert_eq!(sep.sources.iter().map(|s| s.class).collect::<Vec<_>>(), expected);
            assert_eq!(sep.status == SeparationStatus::NothingDetected, expected.is_empty());
            for s in &sep.sources {
                assert!(s.linear_mask.data.iter().all(|&m| (0.0..=1.0).contains(&m)));
                assert!(s.warped_mask.data.iter().all(|&m| m > 0.0 && m < 1.0));
                assert_eq!(s.waveform.len(), mix.len());
                assert_eq!(s.probability, sep.probabilities[s.class]);
            }
        }
    }
    let none = separate(&model, &fe, &clips[0].frame, mix, 0.999_999).unwrap();
    assert_eq!(none.status, SeparationStatus::NothingDetected);
    assert!(none.sources.is_empty());
}

#[test]
fn short_mixture_is_rejected() {
    let (cfg, clips, model) = setup();
    let fe = Frontend::new(&cfg.audio()).unwrap();
    let mut short = clips[0].mixture.clone();
    short.samples.pop();
    assert!(separate(&model, &fe, &clips[0].frame, &short, 0.3).is_err());
    assert!(separate(&model, &fe, &clips[0].frame, &short, 0.999_999).is_err());
}

#[test]
fn classification_accuracy_bounds() {
    let (_, clips, model) = setup();
    let acc = evaluate_classification(&model, &clips, Split::Test, &[0.1, 0.5, 1.0]).unwrap();
    assert_eq!(acc.len(), 3);
    assert!(acc.iter().all(|a| (0.0..=100.0).contains(a)));
    assert_eq!(acc[2], 0.0, "nothing reaches a threshold of one");
    let csv = classification_csv(&TAU_SWEEP, &[("m".into(), vec![12.345, 0.0, 100.0, 50.0, 1.0])]);
    assert_eq!(csv, "model,0.1,0.2,0.3,0.4,0.5\nm,12.35,0.00,100.00,50.00,1.00\n");
}

#[test]
fn separation_reports_are_deterministic() {
    let (cfg, clips, model) = setup();
    let fe = Frontend::new(&cfg.audio()).unwrap();
    let set = EvalSet::from_config(&cfg, &clips, &fe).unwrap();
    assert_eq!(set.items.len(), 5);
    let a = evaluate_separation(&model, "m", &fe, &clips, &set, cfg.tau).unwrap();
    let b = evaluate_separation(&model, "m", &fe, &clips, &set, cfg.tau).unwrap();
    assert_eq!(a, b);
    let sources: usize = set.items.iter().map(|i| i.sources.len()).sum();
    assert_eq!(a.protocol.rows.len(), sources);
    assert_eq!(a.all_classes.rows.len(), sources);
    assert_eq!(a.baseline.rows.len(), sources);
    assert_eq!(a.deployment.rows.len() + a.deployment.misses, sources);

    let csv = a.protocol.to_csv();
    assert!(csv.starts_with("clip_id,source_class,SDR,SIR,SAR,permutation\n"));
    assert_eq!(csv.lines().count(), sources + 1);
    let summary = summary_csv(&[a]);
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("model,mode,sources,misses,false_alarms,SDR,SIR,SAR"));
    let modes: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(modes, ["protocol", "deployment", "all-classes", "baseline"]);

    let again = EvalSet::from_config(&cfg, &clips, &fe).unwrap();
    assert_eq!(again.items, set.items);
    assert_eq!(again.baseline, set.baseline);
}

#[test]
fn linear_oracle_masks_beat_the_mixture() {
    let (cfg, clips, _) = setup();
    let fe = Frontend::new(&cfg.audio()).unwrap();
    let set = EvalSet::build(&clips, Split::Test, 6, 0.0, 1, &fe, 4).unwrap();
    let base = set.baseline.mean().sdr;
    for kind in [OracleMask::Binary, OracleMask::Ratio] {
        let r = evaluate_oracle(&fe, &clips, &set, kind).unwrap();
        assert_eq!(r.rows.len(), set.baseline.rows.len());
        assert!(r.mean().sdr > base, "{}: {} vs {base}", kind.name(), r.mean().sdr);
    }
}
