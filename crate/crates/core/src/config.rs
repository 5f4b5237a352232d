use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AvError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Smallest consistent model, used by gradient checks.
    Tiny,
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Binary,
    Ratio,
}

impl MaskKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Binary => "binary",
            MaskKind::Ratio => "ratio",
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

impl FromStr for Preset {
    type Err = AvError;

    fn from_str(s: &str) -> Result<Self> {
        [Preset::Tiny, Preset::Desk, Preset::Paper]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| AvError::Config(format!("unknown preset `{s}` (tiny, desk, paper)")))
    }
}

impl FromStr for MaskKind {
    type Err = AvError;

    fn from_str(s: &str) -> Result<Self> {
        [MaskKind::Binary, MaskKind::Ratio]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| AvError::Config(format!("unknown mask kind `{s}` (binary, ratio)")))
    }
}

/// Signal-processing constants of a preset.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub clip_len: usize,
    pub warped_bins: usize,
}

impl AudioConfig {
    pub fn linear_bins(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn frames(&self) -> usize {
        1 + (self.clip_len - self.window) / self.hop
    }
}

/// Network shapes of a preset.
#[derive(Clone, Debug, PartialEq)]
pub struct Arch {
    pub classes: usize,
    pub frame_size: usize,
    /// Output channels of the strided encoder blocks, last one at stride 1.
    pub vision_channels: Vec<usize>,
    /// Visual feature channels.
    pub c_v: usize,
    pub depth: usize,
    pub unet_base: usize,
    pub unet_cap: usize,
    pub k: usize,
    pub coef_hidden: usize,
    pub spec_bins: usize,
    pub spec_frames: usize,
    pub dropout: f64,
}

impl Arch {
    pub fn unet_channels(&self, level: usize) -> usize {
        (self.unet_base << level).min(self.unet_cap)
    }

    /// Length of the bottleneck audio feature.
    pub fn c_b(&self) -> usize {
        self.unet_channels(self.depth - 1)
    }

    pub fn feature_size(&self) -> usize {
        self.frame_size / 8
    }
}

impl Preset {
    pub fn audio(self) -> AudioConfig {
        match self {
            Preset::Tiny => AudioConfig { sample_rate: 8000, window: 30, hop: 8, clip_len: 30 + 7 * 8, warped_bins: 8 },
            Preset::Desk => AudioConfig { sample_rate: 8000, window: 254, hop: 64, clip_len: 4286, warped_bins: 64 },
            Preset::Paper => AudioConfig { sample_rate: 11025, window: 1022, hop: 256, clip_len: 66302, warped_bins: 256 },
        }
    }

    pub fn arch(self, classes: usize) -> Arch {
        match self {
            Preset::Tiny => Arch {
                classes,
                frame_size: 16,
                vision_channels: vec![4, 4, 6, 6],
                c_v: 6,
                depth: 2,
                unet_base: 4,
                unet_cap: 8,
                k: 3,
                coef_hidden: 5,
                spec_bins: 8,
                spec_frames: 8,
                dropout: 0.5,
            },
            Preset::Desk => Arch {
                classes,
                frame_size: 64,
                vision_channels: vec![16, 32, 64, 64],
                c_v: 64,
                depth: 4,
                unet_base: 16,
                unet_cap: 256,
                k: 8,
                coef_hidden: 128,
                spec_bins: 64,
                spec_frames: 64,
                dropout: 0.5,
            },
            Preset::Paper => Arch {
                classes,
                frame_size: 224,
                vision_channels: vec![64, 128, 256, 256],
                c_v: 512,
                depth: 7,
                unet_base: 32,
                unet_cap: 512,
                k: 32,
                coef_hidden: 512,
                spec_bins: 256,
                spec_frames: 256,
                dropout: 0.5,
            },
        }
    }
}

/// Clip counts of a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusCounts {
    /// Solo clips per class and split.
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Two-class clips in total, split 80/10/10.
    pub duets: usize,
}

impl Default for CorpusCounts {
    fn default() -> Self {
        Self { train: 200, val: 20, test: 20, duets: 100 }
    }
}

/// Everything a run depends on. Unset `k` and `depth` come from the preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub preset: Preset,
    pub classes: usize,
    pub k: Option<usize>,
    pub depth: Option<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Weight of the classification loss against the separation loss.
    pub lambda: f64,
    pub tau: f64,
    pub mask: MaskKind,
    pub seed: u64,
    /// Probability that a drawn training or test clip is a duet.
    pub duet_fraction: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub corpus: CorpusCounts,
    pub filter_len: usize,
    /// Number of test mixtures scored by separation evaluation.
    pub eval_mixtures: usize,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            classes: 4,
            k: None,
            depth: None,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 8,
            steps: 3000,
            lambda: 0.5,
            tau: 0.3,
            mask: MaskKind::Binary,
            seed: 1,
            duet_fraction: 0.3,
            clip_norm: Some(5.0),
            corpus: CorpusCounts::default(),
            filter_len: 512,
            eval_mixtures: 40,
            data_dir: None,
            checkpoint: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AvError::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("lr must be positive and momentum in [0, 1), got {} and {}", self.lr, self.momentum));
        }
        if self.batch_size == 0 || self.filter_len == 0 || self.eval_mixtures == 0 {
            return bad("batch_size, filter_len and eval_mixtures must be positive".into());
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.duet_fraction) {
            return bad(format!("duet_fraction must lie in [0, 1], got {}", self.duet_fraction));
        }
        if self.k == Some(0) || self.depth == Some(0) {
            return bad("k and depth must be positive".into());
        }
        Ok(())
    }

    pub fn audio(&self) -> AudioConfig {
        self.preset.audio()
    }

    pub fn arch(&self) -> Arch {
        let mut a = self.preset.arch(self.classes);
        if let Some(k) = self.k {
            a.k = k;
        }
        if let Some(d) = self.depth {
            a.depth = d;
        }
        a
    }
}
