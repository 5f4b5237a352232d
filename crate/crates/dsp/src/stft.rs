use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, DspError, Result};
use crate::grid::Grid;

/// Denominator guard of the window-square normalized overlap-add.
pub const ISTFT_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("waveform", "sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid("waveform", format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `F x N` complex grid stored frequency-major (`data[f * N + t]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Vec<Complex<f64>>,
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub original_len: usize,
}

impl ComplexSpectrogram {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.bins()
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex<f64> {
        self.data[bin * self.frames() + frame]
    }

    pub fn magnitude(&self) -> Grid {
        Grid { rows: self.bins(), cols: self.frames(), data: self.data.iter().map(|z| z.norm()).collect() }
    }

    /// Phase in radians.
    pub fn phase(&self) -> Grid {
        Grid { rows: self.bins(), cols: self.frames(), data: self.data.iter().map(|z| z.arg()).collect() }
    }

    /// Rebuilds a spectrogram from magnitude and phase grids.
    pub fn from_polar(mag: &Grid, phase: &Grid, like: &ComplexSpectrogram) -> Result<Self> {
        if !mag.same_shape(phase) || mag.rows != like.bins() || mag.cols != like.frames() {
            return Err(invalid("from_polar", "magnitude, phase and template shapes differ"));
        }
        let data = mag.data.iter().zip(&phase.data).map(|(&m, &p)| Complex::from_polar(m, p)).collect();
        Ok(Self { data, ..like.clone() })
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { data: self.data.iter().map(|z| z * a).collect(), ..self.clone() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.data.len() != other.data.len() || self.window_len != other.window_len || self.hop != other.hop {
            return Err(invalid("spectrogram add", "layouts differ"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { data, ..self.clone() })
    }
}

/// Periodic Hann window `0.5 - 0.5 cos(2 pi n / len)`.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

pub fn stft(w: &Waveform, window_len: usize, hop: usize) -> Result<ComplexSpectrogram> {
    if window_len < 2 || window_len % 2 != 0 {
        return Err(invalid("stft", format!("window length must be even and at least 2, got {window_len}")));
    }
    if hop == 0 {
        return Err(invalid("stft", "hop must be at least 1"));
    }
    if w.len() < window_len {
        return Err(DspError::TooShort { op: "stft", len: w.len(), min: window_len });
    }
    let frames = 1 + (w.len() - window_len) / hop;
    let bins = window_len / 2 + 1;
    let window = hann_periodic(window_len);
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = vec![Complex::new(0.0, 0.0); bins * frames];
    for t in 0..frames {
        let seg = &w.samples[t * hop..t * hop + window_len];
        for ((b, &x), &win) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(x * win, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (f, &z) in buf[..bins].iter().enumerate() {
            data[f * frames + t] = z;
        }
    }
    Ok(ComplexSpectrogram { data, window_len, hop, sample_rate: w.sample_rate, original_len: w.len() })
}

/// Window-square normalized overlap-add, truncated or zero-padded to `target_len`.
pub fn istft(s: &ComplexSpectrogram, target_len: usize) -> Result<Waveform> {
    istft_floored(s, target_len, 0.0)
}

/// [`istft`] whose normalizer is floored at `floor` times its largest value.
/// Near the clip edges the summed squared window tends to zero, so a masked
/// frame (no longer a windowed signal) would otherwise be divided by almost
/// nothing; the floor fades those samples out instead. Samples whose
/// normalizer exceeds the floor are unchanged.
pub fn istft_floored(s: &ComplexSpectrogram, target_len: usize, floor: f64) -> Result<Waveform> {
    if !(0.0..1.0).contains(&floor) {
        return Err(invalid("istft", format!("normalizer floor must lie in [0, 1), got {floor}")));
    }
    let (wl, hop, bins) = (s.window_len, s.hop, s.bins());
    if s.data.is_empty() {
        return Err(invalid("istft", "spectrogram has no frames"));
    }
    let frames = s.frames();
    let span = (frames - 1) * hop + wl;
    let window = hann_periodic(wl);
    let ifft = FftPlanner::new().plan_fft_inverse(wl);
    let mut buf = vec![Complex::new(0.0, 0.0); wl];
    let mut scratch = vec![Complex::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut acc = vec![0.0; span];
    let mut norm = vec![0.0; span];
    let scale = 1.0 / wl as f64;
    for t in 0..frames {
        for f in 0..bins {
            buf[f] = s.data[f * frames + t];
        }
        // real-signal spectrum: DC and Nyquist are real, the rest is Hermitian
        buf[0].im = 0.0;
        buf[bins - 1].im = 0.0;
        for f in 1..bins - 1 {
            buf[wl - f] = buf[f].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * hop;
        for (n, (&z, &win)) in buf.iter().zip(&window).enumerate() {
            acc[start + n] += win * z.re * scale;
            norm[start + n] += win * win;
        }
    }
    let least = floor * norm.iter().copied().fold(0.0, f64::max);
    let mut samples: Vec<f64> = acc.iter().zip(&norm).map(|(a, n)| a / (n.max(least) + ISTFT_EPS)).collect();
    samples.resize(target_len, 0.0);
    Waveform::new(samples, s.sample_rate)
}

/// Waveform-domain energy estimated from an STFT, compensating for the
/// window: `sum_t sum_k |X|^2 / (len * sum_n w(n)^2 / hop)` over the full
/// two-sided spectrum. Matches `sum x^2` for signals supported away from the
/// edges.
pub fn stft_energy(s: &ComplexSpectrogram) -> f64 {
    let (bins, frames) = (s.bins(), s.frames());
    let mut total = 0.0;
    for f in 0..bins {
        let weight = if f == 0 || f == bins - 1 { 1.0 } else { 2.0 };
        total += weight * s.data[f * frames..(f + 1) * frames].iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    let overlap: f64 = hann_periodic(s.window_len).iter().map(|w| w * w).sum::<f64>() / s.hop as f64;
    total / (s.window_len as f64 * overlap)
}
