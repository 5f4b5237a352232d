//! Audio signal processing for mask-based source separation: resampling,
//! STFT/ISTFT with mixture-phase reuse, log-frequency warping, WAV and
//! spectrogram dump IO, and BSS-eval separation metrics.

mod bss;
mod error;
mod grid;
pub mod io;
mod resample;
mod stft;
mod warp;

pub use bss::{bss_decompose, evaluate_pair, metrics, BssDecomposition, BssProjector, Metrics, PairReport, METRIC_CAP_DB};
pub use error::{DspError, Result};
pub use grid::{apply_mask, log_compress, log_expand, Grid, LOG_DELTA};
pub use resample::resample;
pub use stft::{hann_periodic, istft, istft_floored, stft, stft_energy, ComplexSpectrogram, Waveform, ISTFT_EPS};
pub use warp::{unwarp_log_freq, warp_log_freq, LogFreqSpectrogram, WarpMap};
