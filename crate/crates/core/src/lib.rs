//! Audio-visual sound source detection and separation: a frame classifier
//! whose class attention also pools object features, an attention U-Net
//! producing spectrogram mask bases, and a coefficient generator that turns
//! each detected object into a mask over the mixture.
//!
//! Everything is trained jointly with mix-and-separate on a synthetic
//! corpus of colored glyphs and tonal instruments.

pub mod checks;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod fusion;
pub mod image;
pub mod mixing;
pub mod model;
pub mod train;
pub mod unet;
pub mod vision;

pub use config::{Arch, AudioConfig, CorpusCounts, MaskKind, Preset, TrainConfig};
pub use corpus::{generate_clips, load_corpus, write_corpus, Clip, Split};
pub use error::{AvError, Result};
pub use eval::{evaluate_classification, evaluate_separation, separate, EvalSet, SeparationReport, TAU_SWEEP};
pub use frontend::Frontend;
pub use image::Image;
pub use model::Model;
pub use train::{train, LossReport, Trainer};
