//! Audio-visual fusion, mask coefficients, mask composition from shared
//! bases, ground-truth masks and separation losses.

use avsep_dsp::Grid;
use avsep_tensor::layers::{BatchNorm2d, Conv2d, ConvBnRelu};
use avsep_tensor::{Graph, ParamStore, Real, Reduction, Result, TensorError, Var};
use rand::Rng;

use crate::config::{Arch, MaskKind};

/// Guard in the ratio-mask denominator.
pub const RATIO_EPS: f64 = 1e-8;

/// Two pointwise layers mapping a fused audio-visual vector to `k` mask
/// coefficients. The fused input is batch-normalized first: the visual
/// block grows to a much larger scale than the audio bottleneck once the
/// classification loss pushes the attention logits apart.
#[derive(Clone, Debug)]
pub struct CoefficientNet {
    pub input: BatchNorm2d,
    pub hidden: ConvBnRelu,
    pub out: Conv2d,
    pub k: usize,
}

impl CoefficientNet {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, arch: &Arch, rng: &mut R) -> Result<Self> {
        let c_in = arch.c_v + arch.c_b();
        Ok(Self {
            input: BatchNorm2d::new(store, "coef.input.bn", c_in)?,
            hidden: ConvBnRelu {
                conv: Conv2d::new(store, "coef.hidden", c_in, arch.coef_hidden, 1, 1, 0, rng)?,
                bn: BatchNorm2d::new(store, "coef.hidden.bn", arch.coef_hidden)?,
            },
            out: Conv2d::new(store, "coef.out", arch.coef_hidden, arch.k, 1, 1, 0, rng)?,
            k: arch.k,
        })
    }

    /// `O x D` fused vectors to `O x k` coefficients.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, fused: Var) -> Result<Var> {
        let s = g.shape(fused).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Shape { op: "mask_coefficients", detail: format!("expected O x D, got {s:?}") });
        }
        let x = g.reshape(fused, &[s[0], s[1], 1, 1])?;
        let x = self.input.forward(g, x)?;
        let x = self.hidden.forward(g, x)?;
        let x = self.out.forward(g, x)?;
        g.reshape(x, &[s[0], self.k])
    }
}

/// Visual block first, then the audio bottleneck.
pub fn fuse_features<T: Real>(g: &mut Graph<'_, T>, visual: Var, bottleneck: Var) -> Result<Var> {
    g.concat(&[visual, bottleneck])
}

/// Pre-sigmoid mask logits `sum_j P_j M_j`, one `F x N` plane per
/// coefficient row; `owner[o]` selects the basis set of row `o`.
pub fn compose_mask_logits<T: Real>(g: &mut Graph<'_, T>, bases: Var, coefs: Var, owner: &[usize]) -> Result<Var> {
    g.basis_combine(bases, coefs, owner)
}

/// `sigmoid(sum_j P_j M_j)`.
pub fn compose_mask<T: Real>(g: &mut Graph<'_, T>, bases: Var, coefs: Var, owner: &[usize]) -> Result<Var> {
    let z = compose_mask_logits(g, bases, coefs, owner)?;
    g.sigmoid(z)
}

/// Ground-truth mask with the kind it was built as.
#[derive(Clone, Debug, PartialEq)]
pub struct GtMask {
    pub kind: MaskKind,
    pub grid: Grid,
}

/// 1 where the target is at least as loud as every other source.
pub fn gt_binary_mask(target: &Grid, others: &[&Grid]) -> Grid {
    let mut out = Grid::full(target.rows, target.cols, 1.0);
    for o in others {
        for ((m, &t), &v) in out.data.iter_mut().zip(&target.data).zip(&o.data) {
            if t < v {
                *m = 0.0;
            }
        }
    }
    out
}

/// Target share of the summed source magnitudes.
pub fn gt_ratio_mask(target: &Grid, all: &[&Grid]) -> Grid {
    let mut total = Grid::zeros(target.rows, target.cols);
    for s in all {
        for (a, &v) in total.data.iter_mut().zip(&s.data) {
            *a += v;
        }
    }
    Grid {
        rows: target.rows,
        cols: target.cols,
        data: target.data.iter().zip(&total.data).map(|(&t, &s)| t / (s + RATIO_EPS)).collect(),
    }
}

pub fn gt_mask(kind: MaskKind, target: &Grid, all: &[&Grid], target_index: usize) -> GtMask {
    let grid = match kind {
        MaskKind::Binary => {
            let others: Vec<&Grid> = all.iter().enumerate().filter(|(i, _)| *i != target_index).map(|(_, g)| *g).collect();
            gt_binary_mask(target, &others)
        }
        MaskKind::Ratio => gt_ratio_mask(target, all),
    };
    GtMask { kind, grid }
}

/// Mean per-bin loss between predicted logits (`O x F x N`) and ground-truth
/// masks: cross-entropy for binary masks, absolute error of the sigmoid for
/// ratio masks.
pub fn separation_loss<T: Real>(g: &mut Graph<'_, T>, logits: Var, gt: &[GtMask], kind: MaskKind) -> Result<Var> {
    if let Some(m) = gt.iter().find(|m| m.kind != kind) {
        return Err(TensorError::InvalidArgument {
            op: "separation_loss",
            detail: format!("loss kind {} but ground truth is {}", kind.name(), m.kind.name()),
        });
    }
    let target: Vec<T> = gt.iter().flat_map(|m| m.grid.data.iter().map(|&v| T::lit(v))).collect();
    match kind {
        MaskKind::Binary => g.bce_with_logits(logits, &target, Reduction::Mean),
        MaskKind::Ratio => {
            let mu = g.sigmoid(logits)?;
            g.l1_loss(mu, &target)
        }
    }
}
