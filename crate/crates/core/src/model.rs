//! The full audio-visual model: vision path, attention U-Net and mask
//! coefficient generator sharing one parameter store.

use std::path::Path;

use avsep_tensor::{checkpoint, Array, Graph, ParamStore, Real, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Arch, MaskKind};
use crate::error::Result;
use crate::fusion::{compose_mask_logits, fuse_features, separation_loss, CoefficientNet, GtMask};
use crate::unet::UNet;
use crate::vision::{c_loss, pooled_visual_feature, VisionNet, VisionOut};

pub struct Model<T> {
    pub arch: Arch,
    pub store: ParamStore<T>,
    pub vision: VisionNet,
    pub unet: UNet,
    pub coef: CoefficientNet,
}

/// One source to separate: the frame it appears in, its class and the
/// mixture it belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Object {
    pub frame: usize,
    pub class: usize,
    pub mixture: usize,
}

/// Network inputs of a batch.
#[derive(Clone, Debug)]
pub struct BatchInput<T> {
    /// `frames x 3 x S x S`.
    pub frames: Array<T>,
    /// `mixtures x 1 x F' x N` log-compressed warped magnitudes.
    pub specs: Array<T>,
    pub objects: Vec<Object>,
}

/// Graph nodes of a forward pass over a batch.
#[derive(Clone, Debug)]
pub struct Forward {
    pub vision: VisionOut,
    pub bases: Var,
    pub bottleneck: Var,
    pub coefs: Var,
    /// `objects x F' x N` pre-sigmoid masks.
    pub logits: Var,
}

impl<T: Real> Model<T> {
    pub fn new(arch: &Arch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let vision = VisionNet::new(&mut store, arch, &mut rng)?;
        let unet = UNet::new(&mut store, arch, &mut rng)?;
        let coef = CoefficientNet::new(&mut store, arch, &mut rng)?;
        Ok(Self { arch: arch.clone(), store, vision, unet, coef })
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Result<Model<U>> {
        let mut m = Model::<U>::new(&self.arch, 0)?;
        m.store = self.store.cast();
        Ok(m)
    }

    /// Runs both paths. Each object pools the attention channel of its own
    /// class and reuses the bases of its mixture, so the U-Net runs once per
    /// mixture however many objects there are.
    pub fn forward(&self, g: &mut Graph<'_, T>, input: &BatchInput<T>) -> Result<Forward> {
        let frames = g.input(input.frames.clone())?;
        let vision = self.vision.forward(g, frames)?;
        let spec = g.input(input.specs.clone())?;
        let unet = self.unet.forward(g, spec)?;
        let picks: Vec<(usize, usize)> = input.objects.iter().map(|o| (o.frame, o.class)).collect();
        let owner: Vec<usize> = input.objects.iter().map(|o| o.mixture).collect();
        let visual = pooled_visual_feature(g, vision.features, vision.combined, &picks)?;
        let audio = g.gather_rows(unet.bottleneck, &owner)?;
        let fused = fuse_features(g, visual, audio)?;
        let coefs = self.coef.forward(g, fused)?;
        let logits = compose_mask_logits(g, unet.bases, coefs, &owner)?;
        Ok(Forward { vision, bases: unet.bases, bottleneck: unet.bottleneck, coefs, logits })
    }

    /// Training objective `sep + lambda * (c_first + c_second)`. Frames `2m`
    /// and `2m + 1` are the two clips of mixture `m`; `labels` is a flat
    /// `frames x |C|` 0/1 matrix.
    pub fn losses(
        &self,
        g: &mut Graph<'_, T>,
        input: &BatchInput<T>,
        labels: &[T],
        gt: &[GtMask],
        kind: MaskKind,
        lambda: f64,
    ) -> Result<Losses> {
        let fwd = self.forward(g, input)?;
        let n_frames = input.frames.shape()[0];
        let classes = self.arch.classes;
        if labels.len() != n_frames * classes || n_frames % 2 != 0 {
            return Err(TensorError::Shape {
                op: "losses",
                detail: format!("{n_frames} frames need an even count and {} labels, got {}", n_frames * classes, labels.len()),
            }
            .into());
        }
        let half = |first: bool| -> Vec<usize> { (0..n_frames).filter(|f| (f % 2 == 0) == first).collect() };
        let mut c_parts = Vec::new();
        for first in [true, false] {
            let rows = half(first);
            let scores = g.gather_rows(fwd.vision.scores, &rows)?;
            let y: Vec<T> = rows.iter().flat_map(|&r| labels[r * classes..(r + 1) * classes].to_vec()).collect();
            c_parts.push(c_loss(g, scores, &y)?);
        }
        let sep = separation_loss(g, fwd.logits, gt, kind)?;
        let c_sum = g.add(c_parts[0], c_parts[1])?;
        let weighted = g.scale(c_sum, T::lit(lambda))?;
        let total = g.add(sep, weighted)?;
        Ok(Losses { forward: fwd, c_first: c_parts[0], c_second: c_parts[1], sep, total })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(&self.store, path)?)
    }

    /// Loads a checkpoint, validating every name and shape first.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        Ok(checkpoint::load(&mut self.store, path)?)
    }
}

#[derive(Clone, Debug)]
pub struct Losses {
    pub forward: Forward,
    pub c_first: Var,
    pub c_second: Var,
    pub sep: Var,
    pub total: Var,
}
