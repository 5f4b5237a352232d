use crate::error::{invalid, Result};
use crate::stft::ComplexSpectrogram;

/// Offset inside the log compression `ln(1 + mag / LOG_DELTA)`.
pub const LOG_DELTA: f64 = 1e-4;

/// Real `rows x cols` grid stored row-major; rows are frequency bins and
/// columns are frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid("grid", format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// Elementwise `ln(1 + mag / LOG_DELTA)`.
pub fn log_compress(mag: &Grid) -> Result<Grid> {
    if let Some(v) = mag.data.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(invalid("log_compress", format!("magnitudes must be finite and nonnegative, found {v}")));
    }
    Ok(mag.map(|m| (m / LOG_DELTA).ln_1p()))
}

/// Inverse of [`log_compress`].
pub fn log_expand(compressed: &Grid) -> Grid {
    compressed.map(|y| LOG_DELTA * y.exp_m1())
}

/// Scales every bin of `mix` by the mask, keeping the mixture phase.
pub fn apply_mask(mix: &ComplexSpectrogram, mask: &Grid) -> Result<ComplexSpectrogram> {
    if mask.rows != mix.bins() || mask.cols != mix.frames() {
        return Err(invalid(
            "apply_mask",
            format!("mask is {}x{}, spectrogram is {}x{}", mask.rows, mask.cols, mix.bins(), mix.frames()),
        ));
    }
    if let Some(v) = mask.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid("apply_mask", format!("mask entries must lie in [0, 1], found {v}")));
    }
    let mut out = mix.clone();
    for (z, &m) in out.data.iter_mut().zip(&mask.data) {
        *z *= m;
    }
    Ok(out)
}
