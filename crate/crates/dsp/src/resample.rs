use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::stft::Waveform;

/// Zero crossings of the sinc kernel on each side, at the filter cutoff.
const ZERO_CROSSINGS: f64 = 16.0;
const KAISER_BETA: f64 = 8.0;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Polyphase windowed-sinc resampler. Output length is
/// `round(len * target / source)`; samples beyond the edges are held at the
/// boundary value.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(invalid("resample", "target rate must be positive"));
    }
    if w.is_empty() {
        return Err(invalid("resample", "input waveform is empty"));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let g = gcd(target_rate as u64, w.sample_rate as u64);
    let up = target_rate as u64 / g;
    let down = w.sample_rate as u64 / g;
    let cutoff = (target_rate as f64 / w.sample_rate as f64).min(1.0);
    let half = (ZERO_CROSSINGS / cutoff).ceil() as i64;

    // taps for phase p sit at input offsets j - p/up for j in -half+1..=half
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            let mut taps: Vec<f64> = (-half + 1..=half)
                .map(|j| {
                    let x = j as f64 - frac;
                    let r = x / half as f64;
                    let win = if r.abs() >= 1.0 { 0.0 } else { bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) };
                    cutoff * sinc(cutoff * x) * win
                })
                .collect();
            let sum: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= sum);
            taps
        })
        .collect();

    let n_in = w.len() as i64;
    let n_out = ((w.len() as u128 * up as u128 + down as u128 / 2) / down as u128) as usize;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let taps = &phases[(pos % up) as usize];
        let mut acc = 0.0;
        for (t, j) in taps.iter().zip(-half + 1..=half) {
            let idx = (base + j).clamp(0, n_in - 1);
            acc += t * w.samples[idx as usize];
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}
