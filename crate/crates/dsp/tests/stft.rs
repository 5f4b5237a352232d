use std::f64::consts::PI;
use std::time::Instant;

use avsep_dsp::{istft, resample, stft, stft_energy, DspError, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

const PAPER: (u32, usize, usize, usize) = (11025, 1022, 256, 66302);
const DESK: (u32, usize, usize, usize) = (8000, 254, 64, 4286);

fn interior_rel_err(x: &[f64], y: &[f64], edge: usize) -> f64 {
    let range = edge..x.len() - edge;
    let num: f64 = range.clone().map(|i| (x[i] - y[i]).powi(2)).sum();
    let den: f64 = range.map(|i| x[i] * x[i]).sum();
    (num / den).sqrt()
}

fn signals(rate: u32, len: usize, seed: u64) -> Vec<(&'static str, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rate as f64;
    let noise = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let sine = (0..len).map(|n| 0.4 * (2.0 * PI * 441.0 * n as f64 / r).sin()).collect();
    // speech-like: harmonic carrier under a 4 Hz syllabic envelope
    let am = (0..len)
        .map(|n| {
            let t = n as f64 / r;
            let env = 0.5 * (1.0 + (2.0 * PI * 4.0 * t).sin());
            env * (1..6).map(|h| (2.0 * PI * 150.0 * h as f64 * t).sin() / h as f64).sum::<f64>() * 0.3
        })
        .collect();
    vec![("noise", noise), ("sine", sine), ("am", am)]
}

#[test]
fn paper_preset_shape_and_round_trip() {
    let (rate, win, hop, len) = PAPER;
    for (name, x) in signals(rate, len, 1) {
        let w = Waveform::new(x.clone(), rate).unwrap();
        let start = Instant::now();
        let s = stft(&w, win, hop).unwrap();
        let y = istft(&s, len).unwrap();
        let secs = start.elapsed().as_secs_f64();
        assert_eq!((s.bins(), s.frames()), (512, 256));
        let err = interior_rel_err(&x, &y.samples, win);
        assert!(err < 1e-6, "{name}: {err}");
        assert!(secs < 1.0, "{name}: {secs} s");
    }
}

#[test]
fn desk_preset_round_trip() {
    let (rate, win, hop, len) = DESK;
    for (name, x) in signals(rate, len, 2) {
        let w = Waveform::new(x.clone(), rate).unwrap();
        let s = stft(&w, win, hop).unwrap();
        assert_eq!((s.bins(), s.frames()), (128, 64));
        let y = istft(&s, len).unwrap();
        let err = interior_rel_err(&x, &y.samples, win);
        assert!(err < 1e-6, "{name}: {err}");
    }
}

#[test]
fn zero_signal_gives_zero_grid_and_back() {
    let w = Waveform::new(vec![0.0; 1000], 8000).unwrap();
    let s = stft(&w, 254, 64).unwrap();
    assert!(s.data.iter().all(|z| *z == Complex::new(0.0, 0.0)));
    assert!(istft(&s, 1000).unwrap().samples.iter().all(|&v| v == 0.0));
}

#[test]
fn bin_centered_tone_has_one_dominant_bin() {
    let (win, bin) = (254usize, 17usize);
    let x: Vec<f64> = (0..2000).map(|n| (2.0 * PI * bin as f64 * n as f64 / win as f64).cos()).collect();
    let s = stft(&Waveform::new(x.clone(), 8000).unwrap(), win, 64).unwrap();
    for t in 0..s.frames() {
        let mags: Vec<f64> = (0..s.bins()).map(|f| s.get(f, t).norm()).collect();
        let argmax = (0..mags.len()).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
        assert_eq!(argmax, bin);
    }
    // direct DFT of the windowed third frame
    let hann: Vec<f64> = (0..win).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos()).collect();
    for f in [0, 5, bin, 100, 127] {
        let mut acc = Complex::new(0.0, 0.0);
        for n in 0..win {
            let ang = -2.0 * PI * (f * n) as f64 / win as f64;
            acc += Complex::from_polar(x[3 * 64 + n] * hann[n], ang);
        }
        assert!((acc - s.get(f, 3)).norm() < 1e-9, "bin {f}");
    }
}

#[test]
fn istft_is_linear() {
    let (rate, win, hop, len) = DESK;
    let sig = signals(rate, len, 3);
    let s1 = stft(&Waveform::new(sig[0].1.clone(), rate).unwrap(), win, hop).unwrap();
    let s2 = stft(&Waveform::new(sig[2].1.clone(), rate).unwrap(), win, hop).unwrap();
    let (a, b) = (0.7, -1.3);
    let lhs = istft(&s1.scale(a).add(&s2.scale(b)).unwrap(), len).unwrap();
    let y1 = istft(&s1, len).unwrap();
    let y2 = istft(&s2, len).unwrap();
    for i in 0..len {
        assert!((lhs.samples[i] - (a * y1.samples[i] + b * y2.samples[i])).abs() < 1e-10);
    }
}

#[test]
fn window_compensated_energy_matches_parseval() {
    for (rate, win, hop, len) in [PAPER, DESK] {
        for (name, mut x) in signals(rate, len, 4) {
            // keep support away from the edges, where frames overlap less
            for (i, v) in x.iter_mut().enumerate() {
                if i < win || i >= len - win {
                    *v = 0.0;
                }
            }
            let w = Waveform::new(x, rate).unwrap();
            let est = stft_energy(&stft(&w, win, hop).unwrap());
            let rel = (est - w.energy()).abs() / w.energy();
            assert!(rel < 0.01, "{name} @ {win}: {rel}");
        }
    }
}

#[test]
fn short_input_names_minimum() {
    let w = Waveform::new(vec![0.0; 100], 8000).unwrap();
    match stft(&w, 254, 64) {
        Err(e @ DspError::TooShort { min: 254, .. }) => assert!(e.to_string().contains("254")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn waveform_rejects_bad_input() {
    assert!(Waveform::new(vec![0.0], 0).is_err());
    assert!(Waveform::new(vec![f64::NAN], 8000).is_err());
}

fn peak_hz(x: &[f64], rate: u32) -> (f64, f64) {
    let n = x.len();
    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let k = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
    (k as f64 * rate as f64 / n as f64, rate as f64 / n as f64)
}

#[test]
fn resample_identity_and_length() {
    let w = Waveform::new((0..1000).map(|i| (i as f64 * 0.01).sin()).collect(), 8000).unwrap();
    assert_eq!(resample(&w, 8000).unwrap(), w);
    assert_eq!(resample(&w, 11025).unwrap().len(), (1000.0f64 * 11025.0 / 8000.0).round() as usize);
    assert_eq!(resample(&w, 3000).unwrap().len(), 375);
    assert!(resample(&Waveform::new(vec![], 8000).unwrap(), 4000).is_err());
    assert!(resample(&w, 0).is_err());
}

#[test]
fn resample_keeps_tone_frequency() {
    let src = 44100;
    let x: Vec<f64> = (0..44100).map(|n| (2.0 * PI * 1000.0 * n as f64 / src as f64).sin()).collect();
    let y = resample(&Waveform::new(x, src).unwrap(), 11025).unwrap();
    let (hz, bin) = peak_hz(&y.samples, 11025);
    assert!((hz - 1000.0).abs() <= bin, "{hz}");
    let z = resample(&y, 8000).unwrap();
    let (hz, bin) = peak_hz(&z.samples, 8000);
    assert!((hz - 1000.0).abs() <= bin, "{hz}");
}

#[test]
fn resample_preserves_dc() {
    for (src, dst) in [(44100, 11025), (11025, 8000), (8000, 11025)] {
        let w = Waveform::new(vec![0.25; 3000], src).unwrap();
        let y = resample(&w, dst).unwrap();
        assert!(y.samples.iter().all(|v| (v - 0.25).abs() < 1e-3), "{src}->{dst}");
    }
}
