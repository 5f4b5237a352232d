//! Parameterized layers. A layer only holds parameter ids and
//! hyperparameters; values live in a [`ParamStore`].

use rand::Rng;

use crate::array::Array;
use crate::error::Result;
use crate::graph::{BatchNormArgs, Graph, Var};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::real::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight =
            store.add_kernel(format!("{name}.weight"), &[c_out, c_in, kernel, kernel], c_in * kernel * kernel, rng)?;
        let bias = store.add(format!("{name}.bias"), Array::zeros([c_out]), ParamKind::Trainable)?;
        Ok(Self { weight, bias, stride, pad })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        // Each output pixel receives about c_in * (kernel / stride)^2 terms.
        let fan_in = (c_in * kernel * kernel / (stride * stride)).max(1);
        let weight = store.add_kernel(format!("{name}.weight"), &[c_in, c_out, kernel, kernel], fan_in, rng)?;
        let bias = store.add(format!("{name}.bias"), Array::zeros([c_out]), ParamKind::Trainable)?;
        Ok(Self { weight, bias, stride })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        g.conv_transpose2d(x, w, Some(b), self.stride)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Array::full([channels], T::one()), ParamKind::Trainable)?,
            beta: store.add(format!("{name}.beta"), Array::zeros([channels]), ParamKind::Trainable)?,
            running_mean: store.add(format!("{name}.running_mean"), Array::zeros([channels]), ParamKind::Buffer)?,
            running_var: store.add(format!("{name}.running_var"), Array::full([channels], T::one()), ParamKind::Buffer)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let args = BatchNormArgs {
            gamma: g.param(self.gamma)?,
            beta: g.param(self.beta)?,
            running_mean: self.running_mean,
            running_var: self.running_var,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        };
        g.batch_norm(x, &args)
    }
}

/// Convolution followed by batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.bn.forward(g, y)?;
        g.relu(y)
    }
}
