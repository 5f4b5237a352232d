//! Attention U-Net over the warped log-magnitude spectrogram. Emits `k`
//! pre-sigmoid mask bases and a pooled bottleneck feature.

use std::sync::atomic::{AtomicUsize, Ordering};

use avsep_tensor::layers::{BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d};
use avsep_tensor::{Graph, ParamStore, Real, Result, TensorError, Var};
use rand::Rng;

use crate::config::Arch;

/// Additive attention on a skip connection, gated by the coarser decoder
/// signal.
#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub skip: Conv2d,
    pub gate: Conv2d,
    pub psi: Conv2d,
}

impl AttentionGate {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        c_skip: usize,
        c_gate: usize,
        c_inter: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            skip: Conv2d::new(store, &format!("{name}.skip"), c_skip, c_inter, 1, 1, 0, rng)?,
            gate: Conv2d::new(store, &format!("{name}.gate"), c_gate, c_inter, 1, 1, 0, rng)?,
            psi: Conv2d::new(store, &format!("{name}.psi"), c_inter, 1, 1, 1, 0, rng)?,
        })
    }

    /// Returns the gated skip and the `B x 1 x H x W` coefficient map.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, skip: Var, gate: Var) -> Result<(Var, Var)> {
        let (ss, gs) = (g.shape(skip).to_vec(), g.shape(gate).to_vec());
        if ss.len() != 4 || gs.len() != 4 || gs[2] * 2 != ss[2] || gs[3] * 2 != ss[3] {
            return Err(TensorError::Shape {
                op: "attention_gate",
                detail: format!("gate {gs:?} must be half the spatial size of skip {ss:?}"),
            });
        }
        let s = self.skip.forward(g, skip)?;
        let q = self.gate.forward(g, gate)?;
        let q = g.upsample2(q)?;
        let h = g.add(s, q)?;
        let h = g.relu(h)?;
        let a = self.psi.forward(g, h)?;
        let a = g.sigmoid(a)?;
        Ok((g.mul_broadcast(skip, a)?, a))
    }
}

#[derive(Clone, Debug)]
pub struct UpBlock {
    pub deconv: ConvTranspose2d,
    pub bn: BatchNorm2d,
}

#[derive(Debug)]
pub struct UNet {
    pub down: Vec<ConvBnRelu>,
    /// Deepest first.
    pub up: Vec<UpBlock>,
    /// `gates[i]` gates the skip consumed after `up[i]`.
    pub gates: Vec<AttentionGate>,
    pub head: Conv2d,
    pub depth: usize,
    calls: AtomicUsize,
}

#[derive(Clone, Debug)]
pub struct UNetOut {
    /// `B x k x F x N` pre-sigmoid bases.
    pub bases: Var,
    /// `B x C_b` global average of the deepest encoder map.
    pub bottleneck: Var,
    /// Gate coefficient maps, deepest first.
    pub gate_maps: Vec<Var>,
}

impl UNet {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, arch: &Arch, rng: &mut R) -> Result<Self> {
        let depth = arch.depth;
        let ch = |l: usize| arch.unet_channels(l);
        let mut down = Vec::new();
        let mut c_in = 1;
        for l in 0..depth {
            let name = format!("unet.down.{l}");
            down.push(ConvBnRelu {
                conv: Conv2d::new(store, &name, c_in, ch(l), 4, 2, 1, rng)?,
                bn: BatchNorm2d::new(store, &format!("{name}.bn"), ch(l))?,
            });
            c_in = ch(l);
        }
        let mut up = Vec::new();
        let mut gates = Vec::new();
        let mut c_dec = ch(depth - 1);
        for (i, l) in (0..depth).rev().enumerate() {
            // up[i] lands on the resolution of encoder level l - 1 (or the input)
            let c_out = if l == 0 { ch(0) } else { ch(l - 1) };
            let name = format!("unet.up.{i}");
            up.push(UpBlock {
                deconv: ConvTranspose2d::new(store, &name, c_dec, c_out, 2, 2, rng)?,
                bn: BatchNorm2d::new(store, &format!("{name}.bn"), c_out)?,
            });
            if l > 0 {
                gates.push(AttentionGate::new(store, &format!("unet.gate.{i}"), c_out, c_dec, c_out, rng)?);
                c_dec = 2 * c_out;
            } else {
                c_dec = c_out;
            }
        }
        let head = Conv2d::new(store, "unet.head", c_dec, arch.k, 1, 1, 0, rng)?;
        Ok(Self { down, up, gates, head, depth, calls: AtomicUsize::new(0) })
    }

    /// Number of forward passes run so far.
    pub fn forward_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, spec: Var) -> Result<UNetOut> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let s = g.shape(spec).to_vec();
        let div = 1usize << self.depth;
        if s.len() != 4 || s[1] != 1 || s[2] % div != 0 || s[3] % div != 0 || s[2] == 0 || s[3] == 0 {
            return Err(TensorError::Shape {
                op: "unet_forward",
                detail: format!("input {s:?} must be B x 1 x F x N with F and N divisible by 2^{} = {div}", self.depth),
            });
        }
        let mut skips = Vec::with_capacity(self.depth);
        let mut x = spec;
        for block in &self.down {
            x = block.forward(g, x)?;
            skips.push(x);
        }
        let bottleneck = g.spatial_mean(x)?;
        let mut gate_maps = Vec::new();
        let mut d = x;
        for (i, block) in self.up.iter().enumerate() {
            let u = block.deconv.forward(g, d)?;
            let u = block.bn.forward(g, u)?;
            let u = g.relu(u)?;
            let level = self.depth - 1 - i;
            d = if level > 0 {
                let (gated, a) = self.gates[i].forward(g, skips[level - 1], d)?;
                gate_maps.push(a);
                g.concat(&[u, gated])?
            } else {
                u
            };
        }
        let bases = self.head.forward(g, d)?;
        Ok(UNetOut { bases, bottleneck, gate_maps })
    }
}
