//! Frame encoder and the two-branch class attention that yields class
//! scores, soft segmentations and attention-pooled object features.

use avsep_tensor::layers::Conv2d;
use avsep_tensor::{Graph, ParamStore, Real, Reduction, Result, TensorError, Var};
use rand::Rng;

use crate::config::Arch;

/// Planes with less attention mass than this fall back to uniform.
pub const NORMALIZE_EPS: f64 = 1e-8;
/// Guard in the weighted-pool denominator.
pub const POOL_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct VisionNet {
    pub encoder: Vec<Conv2d>,
    pub feature: Conv2d,
    pub expansive: Conv2d,
    pub discriminative: Conv2d,
    pub frame_size: usize,
    pub dropout: f64,
}

/// Attention outputs for a batch of frames.
#[derive(Clone, Copy, Debug)]
pub struct VisionOut {
    /// `B x C_v x H x W`.
    pub features: Var,
    /// `B x |C| x H x W`, each plane sums to one.
    pub expansive: Var,
    pub discriminative: Var,
    /// Elementwise product of the two attention maps.
    pub combined: Var,
    /// `B x |C|` spatial means of `combined`.
    pub scores: Var,
}

impl VisionNet {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, arch: &Arch, rng: &mut R) -> Result<Self> {
        let mut encoder = Vec::new();
        let mut c_in = 3;
        let last = arch.vision_channels.len() - 1;
        for (i, &c) in arch.vision_channels.iter().enumerate() {
            let stride = if i == last { 1 } else { 2 };
            encoder.push(Conv2d::new(store, &format!("vision.enc.{i}"), c_in, c, 3, stride, 1, rng)?);
            c_in = c;
        }
        Ok(Self {
            encoder,
            feature: Conv2d::new(store, "vision.feature", c_in, arch.c_v, 3, 1, 1, rng)?,
            expansive: Conv2d::new(store, "vision.expansive", arch.c_v, arch.classes, 1, 1, 0, rng)?,
            discriminative: Conv2d::new(store, "vision.discriminative", arch.c_v, arch.classes, 1, 1, 0, rng)?,
            frame_size: arch.frame_size,
            dropout: arch.dropout,
        })
    }

    /// `B x 3 x S x S` frames in `[0, 1]` to visual features at stride 8.
    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, frames: Var) -> Result<Var> {
        let s = g.shape(frames).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != self.frame_size || s[3] != self.frame_size {
            return Err(TensorError::Shape {
                op: "encode_frame",
                detail: format!("expected B x 3 x {0} x {0}, got {s:?}", self.frame_size),
            });
        }
        let mut x = frames;
        for conv in &self.encoder {
            let y = conv.forward(g, x)?;
            x = g.relu(y)?;
        }
        self.feature.forward(g, x)
    }

    pub fn expansive_attention<T: Real>(&self, g: &mut Graph<'_, T>, features: Var) -> Result<Var> {
        let x = g.dropout(features, self.dropout)?;
        let x = self.expansive.forward(g, x)?;
        let x = g.dropout(x, self.dropout)?;
        let x = g.relu(x)?;
        g.spatial_normalize(x, NORMALIZE_EPS)
    }

    pub fn discriminative_attention<T: Real>(&self, g: &mut Graph<'_, T>, features: Var) -> Result<Var> {
        self.discriminative.forward(g, features)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, frames: Var) -> Result<VisionOut> {
        let features = self.encode(g, frames)?;
        let expansive = self.expansive_attention(g, features)?;
        let discriminative = self.discriminative_attention(g, features)?;
        let (combined, scores) = combine_and_score(g, expansive, discriminative)?;
        Ok(VisionOut { features, expansive, discriminative, combined, scores })
    }
}

pub fn combine_and_score<T: Real>(g: &mut Graph<'_, T>, expansive: Var, discriminative: Var) -> Result<(Var, Var)> {
    let combined = g.mul(expansive, discriminative)?;
    let scores = g.spatial_mean(combined)?;
    Ok((combined, scores))
}

/// Multi-label cross-entropy summed over classes and averaged over rows.
/// `labels` is a flat `rows x |C|` 0/1 matrix.
pub fn c_loss<T: Real>(g: &mut Graph<'_, T>, scores: Var, labels: &[T]) -> Result<Var> {
    let rows = g.shape(scores)[0];
    let total = g.bce_with_logits(scores, labels, Reduction::Sum)?;
    g.scale(total, T::one() / T::lit(rows as f64))
}

/// Classes whose sigmoid score reaches `tau`.
pub fn detect_objects(scores: &[f64], tau: f64) -> Vec<usize> {
    scores.iter().enumerate().filter(|(_, &s)| sigmoid(s) >= tau).map(|(c, _)| c).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Attention-pooled visual vectors, one row per `(frame, class)` pick,
/// weighted by the rectified combined attention of that class.
pub fn pooled_visual_feature<T: Real>(
    g: &mut Graph<'_, T>,
    features: Var,
    combined: Var,
    picks: &[(usize, usize)],
) -> Result<Var> {
    let weights = g.select_channels(combined, picks)?;
    let weights = g.relu(weights)?;
    let rows: Vec<usize> = picks.iter().map(|p| p.0).collect();
    let feats = g.gather_rows(features, &rows)?;
    g.weighted_pool(feats, weights, POOL_EPS)
}
