//! Waveform to network input and predicted mask back to a waveform.

use avsep_dsp::{apply_mask, istft_floored, log_compress, stft, ComplexSpectrogram, Grid, Waveform, WarpMap};

use crate::config::AudioConfig;
use crate::error::{data_err, Result};

/// Normalizer floor of the resynthesis overlap-add, relative to its peak.
/// Without it the first and last few samples of a masked clip are divided by
/// a near-zero window sum and swamp the artifact energy.
pub const RESYNTH_FLOOR: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct Frontend {
    pub audio: AudioConfig,
    pub map: WarpMap,
}

impl Frontend {
    pub fn new(audio: &AudioConfig) -> Result<Self> {
        Ok(Self { audio: audio.clone(), map: WarpMap::new(audio.linear_bins(), audio.warped_bins)? })
    }

    pub fn check_len(&self, w: &Waveform) -> Result<()> {
        if w.len() != self.audio.clip_len || w.sample_rate != self.audio.sample_rate {
            return Err(data_err(format!(
                "expected {} samples at {} Hz, got {} at {} Hz",
                self.audio.clip_len,
                self.audio.sample_rate,
                w.len(),
                w.sample_rate
            )));
        }
        Ok(())
    }

    pub fn spectrogram(&self, w: &Waveform) -> Result<ComplexSpectrogram> {
        self.check_len(w)?;
        Ok(stft(w, self.audio.window, self.audio.hop)?)
    }

    /// Magnitude resampled onto the log-frequency axis.
    pub fn warped_magnitude(&self, spec: &ComplexSpectrogram) -> Result<Grid> {
        Ok(self.map.warp(&spec.magnitude())?)
    }

    /// Log-compressed warped magnitude, the U-Net input.
    pub fn network_input(&self, spec: &ComplexSpectrogram) -> Result<Grid> {
        Ok(log_compress(&self.warped_magnitude(spec)?)?)
    }

    /// Warped mask to linear frequency, clipped to `[0, 1]`.
    pub fn linear_mask(&self, warped: &Grid) -> Result<Grid> {
        Ok(self.map.unwarp(warped)?.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Masks the mixture (keeping its phase) and resynthesizes.
    pub fn resynthesize(&self, mix: &ComplexSpectrogram, linear_mask: &Grid) -> Result<Waveform> {
        Ok(istft_floored(&apply_mask(mix, linear_mask)?, self.audio.clip_len, RESYNTH_FLOOR)?)
    }
}
