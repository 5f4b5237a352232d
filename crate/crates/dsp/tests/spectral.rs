use std::f64::consts::PI;

use avsep_dsp::io::{read_spec1, read_wav, write_spec1, write_wav, quantize_pcm16};
use avsep_dsp::{
    apply_mask, log_compress, log_expand, stft, unwarp_log_freq, warp_log_freq, Grid, Waveform, WarpMap,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_grid(rows: usize, cols: usize, seed: u64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<(f64, f64, f64)> =
        (0..cols).map(|_| (rng.gen_range(0.5..1.5), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.2..0.6))).collect();
    Grid::from_fn(rows, cols, |f, t| {
        let (a, ph, b) = params[t];
        let x = f as f64 / rows as f64;
        a + b * (2.0 * PI * x + ph).cos() + 0.3 * (PI * x * 0.5).sin()
    })
}

fn rel_l2(a: &Grid, b: &Grid) -> f64 {
    let num: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a.data.iter().map(|x| x * x).sum();
    (num / den).sqrt()
}

#[test]
fn constant_grid_is_fixed_by_warp_and_unwarp() {
    let g = Grid::full(512, 7, 3.25);
    let w = warp_log_freq(&g, 256).unwrap();
    assert!(w.data.data.iter().all(|&v| v == 3.25));
    let back = unwarp_log_freq(&w, 512).unwrap();
    assert_eq!(back, g);
}

#[test]
fn grids_constant_along_frequency_round_trip_exactly() {
    let g = Grid::from_fn(128, 9, |_, t| t as f64 * 0.5 - 1.0);
    let w = warp_log_freq(&g, 64).unwrap();
    assert_eq!(unwarp_log_freq(&w, 128).unwrap(), g);
}

#[test]
fn paper_preset_round_trip_on_smooth_grids() {
    for seed in 0..5 {
        let g = smooth_grid(512, 16, seed);
        let w = warp_log_freq(&g, 256).unwrap();
        let back = unwarp_log_freq(&w, 512).unwrap();
        let err = rel_l2(&g, &back);
        assert!(err < 0.05, "seed {seed}: {err}");
    }
}

#[test]
fn centers_increase_and_monotone_columns_stay_monotone() {
    let map = WarpMap::new(512, 256).unwrap();
    assert!(map.centers.windows(2).all(|c| c[0] < c[1]));
    assert_eq!(map.centers[0], 2.0);
    assert_eq!(*map.centers.last().unwrap(), 511.0);
    let g = Grid::from_fn(512, 3, |f, t| ((f + 1) as f64).ln() * (t + 1) as f64);
    let w = map.warp(&g).unwrap();
    for t in 0..3 {
        for i in 1..256 {
            assert!(w.get(i, t) >= w.get(i - 1, t));
        }
    }
}

#[test]
fn warp_of_unwarp_is_exact_when_centers_are_integer() {
    // 17 linear bins into 4 warped bins gives centers 2, 4, 8, 16
    let map = WarpMap::new(17, 4).unwrap();
    assert!(map.centers.iter().zip([2.0, 4.0, 8.0, 16.0]).all(|(c, e)| (c - e).abs() < 1e-12));
    let y = Grid::new(4, 2, vec![1.0, -2.0, 3.5, 0.25, -1.0, 7.0, 0.0, 2.0]).unwrap();
    let back = map.warp(&map.unwarp(&y).unwrap()).unwrap();
    for (a, b) in back.data.iter().zip(&y.data) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn unwarp_copies_lowest_row_below_range() {
    let map = WarpMap::new(128, 64).unwrap();
    let y = Grid::from_fn(64, 2, |i, t| (i * 10 + t) as f64);
    let lin = map.unwarp(&y).unwrap();
    for f in 0..=2 {
        assert_eq!(lin.row(f), y.row(0));
    }
}

#[test]
fn warp_errors() {
    assert!(warp_log_freq(&Grid::zeros(10, 2), 1).is_err());
    assert!(warp_log_freq(&Grid::zeros(1, 2), 4).is_err());
    let w = warp_log_freq(&Grid::zeros(10, 2), 4).unwrap();
    assert!(unwarp_log_freq(&w, 12).is_err());
}

#[test]
fn log_compress_properties() {
    let g = Grid::new(1, 5, vec![0.0, 1e-6, 1e-3, 0.5, 20.0]).unwrap();
    let c = log_compress(&g).unwrap();
    assert_eq!(c.data[0], 0.0);
    assert!(c.data.windows(2).all(|w| w[0] < w[1]));
    let back = log_expand(&c);
    for (a, b) in g.data.iter().zip(&back.data) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-300));
    }
    assert!(log_compress(&Grid::new(1, 1, vec![-1e-9]).unwrap()).is_err());
}

fn test_spec() -> avsep_dsp::ComplexSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = (0..1000).map(|_| rng.gen_range(-0.5..0.5)).collect();
    stft(&Waveform::new(x, 8000).unwrap(), 254, 64).unwrap()
}

#[test]
fn mask_application() {
    let s = test_spec();
    let (f, n) = (s.bins(), s.frames());
    assert_eq!(apply_mask(&s, &Grid::full(f, n, 1.0)).unwrap(), s);
    assert!(apply_mask(&s, &Grid::zeros(f, n)).unwrap().data.iter().all(|z| z.norm() == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = Grid::from_fn(f, n, |_, _| rng.gen_range(0.0..=1.0));
    let a = apply_mask(&s, &m).unwrap();
    let b = apply_mask(&s, &m.map(|v| 1.0 - v)).unwrap();
    let (mix, ma, mb) = (s.magnitude(), a.magnitude(), b.magnitude());
    for i in 0..mix.data.len() {
        assert!((ma.data[i] + mb.data[i] - mix.data[i]).abs() <= 1e-15 * mix.data[i].max(1.0));
    }
    let (pa, pm) = (a.phase(), s.phase());
    for i in 0..pa.data.len() {
        if ma.data[i] > 0.0 {
            assert!((pa.data[i] - pm.data[i]).abs() < 1e-12);
        }
    }
    assert!(apply_mask(&s, &Grid::full(f, n, 1.01)).is_err());
    assert!(apply_mask(&s, &Grid::full(f, n + 1, 0.5)).is_err());
}

#[test]
fn wav_round_trip_on_pcm_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let samples: Vec<f64> = (0..500).map(|i| quantize_pcm16((i as f64 * 0.05).sin() * 0.8)).collect();
    let w = Waveform::new(samples, 11025).unwrap();
    write_wav(&path, &w).unwrap();
    let r = read_wav(&path).unwrap();
    assert_eq!(r, w);
}

#[test]
fn wav_rejects_stereo() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.wav");
    let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    w.write_sample(0i16).unwrap();
    w.write_sample(0i16).unwrap();
    w.finalize().unwrap();
    assert!(read_wav(&path).is_err());
}

#[test]
fn spec1_layout_and_round_trip() {
    let mag = Grid::new(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.5]).unwrap();
    let phase = mag.map(|v| -v / 10.0);
    let mut bytes = Vec::new();
    write_spec1(&mut bytes, &mag, None).unwrap();
    assert_eq!(&bytes[..6], b"SPEC1\n");
    assert_eq!(bytes[6], 0);
    assert_eq!(&bytes[7..15], &[2, 0, 0, 0, 3, 0, 0, 0]);
    assert_eq!(bytes.len(), 15 + 6 * 4);
    assert_eq!(read_spec1(&bytes[..]).unwrap(), (mag.clone(), None));

    let mut bytes = Vec::new();
    write_spec1(&mut bytes, &mag, Some(&phase)).unwrap();
    assert_eq!(bytes[6], 1);
    let (m, p) = read_spec1(&bytes[..]).unwrap();
    assert_eq!(m, mag);
    let p = p.unwrap();
    for (a, b) in p.data.iter().zip(&phase.data) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert!(read_spec1(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_spec1(&bad[..]).is_err());
}

proptest! {
    #[test]
    fn warp_stays_within_column_range(vals in proptest::collection::vec(0.0f64..10.0, 64 * 3)) {
        let g = Grid::new(64, 3, vals).unwrap();
        let w = warp_log_freq(&g, 32).unwrap();
        let back = unwarp_log_freq(&w, 64).unwrap();
        for t in 0..3 {
            let col: Vec<f64> = (0..64).map(|f| g.get(f, t)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for f in 0..32 {
                prop_assert!(w.data.get(f, t) >= lo - 1e-12 && w.data.get(f, t) <= hi + 1e-12);
            }
            for f in 0..64 {
                prop_assert!(back.get(f, t) >= lo - 1e-12 && back.get(f, t) <= hi + 1e-12);
            }
        }
    }
}
