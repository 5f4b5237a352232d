//! Tape of recorded operations and the reverse sweep over it.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! topological order: every node is visited once and its gradient is complete
//! by the time it is visited.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::{dims4, Array};
use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::ops::conv;
use crate::ops::loss::{bce_with_logits, sigmoid};
use crate::ops::norm;
use crate::params::{ParamId, ParamStore};
use crate::real::{gemm, Real};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Something unusual that happened during a forward pass but was recovered.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub op: &'static str,
    pub message: String,
}

/// Batch statistics observed in train mode, to be folded into running
/// statistics once the pass is over.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
    pub momentum: T,
}

impl<T: Real> StatUpdate<T> {
    pub fn apply(&self, store: &mut ParamStore<T>) {
        let m = self.momentum;
        for (r, &v) in store.get_mut(self.mean_id).data_mut().iter_mut().zip(&self.mean) {
            *r = (T::one() - m) * *r + m * v;
        }
        for (r, &v) in store.get_mut(self.var_id).data_mut().iter_mut().zip(&self.var) {
            *r = (T::one() - m) * *r + m * v;
        }
    }
}

pub struct BatchNormArgs {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvT2d { x: Var, w: Var, b: Option<Var>, stride: usize },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulBroadcast { x: Var, gate: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Dropout { x: Var, mask: Vec<T> },
    SpatialMean(Var),
    MaxPool2 { x: Var, argmax: Vec<usize> },
    WeightedPool { x: Var, w: Var, denom: Vec<Option<T>> },
    SpatialNormalize { x: Var, denom: Vec<Option<T>> },
    Upsample2(Var),
    Concat { inputs: Vec<Var>, widths: Vec<usize> },
    GatherRows { x: Var, index: Vec<usize> },
    SelectChannels { x: Var, picks: Vec<(usize, usize)> },
    Reshape(Var),
    BasisCombine { p: Var, m: Var, owner: Vec<usize> },
    BceWithLogits { z: Var, target: Vec<T>, scale: T },
    L1 { x: Var, target: Vec<T> },
    Sum(Var, T),
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// One forward pass. Parameters are borrowed immutably for the lifetime of
/// the graph; batch-norm running statistics are collected as [`StatUpdate`]s.
pub struct Graph<'p, T: Real> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    mode: Mode,
    rng: ChaCha8Rng,
    diagnostics: Vec<Diagnostic>,
    stat_updates: Vec<StatUpdate<T>>,
}

impl<'p, T: Real> Graph<'p, T> {
    /// Graph without parameters, for free-standing computations.
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            diagnostics: Vec::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Self { params: Some(params), ..Self::new(mode, seed) }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Array<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Array<T>) -> Result<Var> {
        self.push("input", value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Array<T>) -> Result<Var> {
        self.push("variable", value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let store = self.params.ok_or_else(|| arg_err("param", "graph has no parameter store"))?;
        let v = self.push("param", store.get(id).clone(), Op::Leaf, true)?;
        self.param_vars.insert(id, v);
        Ok(v)
    }

    /// Value of a parameter (or buffer) without recording a node.
    pub fn param_value(&self, id: ParamId) -> Result<&'p Array<T>> {
        let store = self.params.ok_or_else(|| arg_err("param", "graph has no parameter store"))?;
        Ok(store.get(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push("conv2d", out, Op::Conv2d { x, w, b, stride, pad }, ng)
    }

    /// Transposed convolution; kernel is `C_in x C_out x kh x kw` and the
    /// output extent is `(H - 1) * stride + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let out = conv::conv_t_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride)?;
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push("conv_transpose2d", out, Op::ConvT2d { x, w, b, stride }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let ng = self.needs(x);
        self.push("relu", out, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        self.push("sigmoid", out, Op::Sigmoid(x), ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Array<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Array::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push("sub", out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push("mul", out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let ng = self.needs(x);
        self.push("scale", out, Op::Scale(x, s), ng)
    }

    /// `x (B x C x H x W) * gate (B x 1 x H x W)`, gate broadcast over channels.
    pub fn mul_broadcast(&mut self, x: Var, gate: Var) -> Result<Var> {
        const OP: &str = "mul_broadcast";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        let gs = self.value(gate).dims4(OP)?;
        if gs != (b, 1, h, w) {
            return Err(shape_err(OP, format!("gate {:?} must be {b} x 1 x {h} x {w}", self.shape(gate))));
        }
        let s = h * w;
        let (xv, gv) = (self.value(x).data(), self.value(gate).data());
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            let g = &gv[bi * s..(bi + 1) * s];
            for ch in 0..c {
                let off = (bi * c + ch) * s;
                for i in 0..s {
                    out[off + i] = xv[off + i] * g[i];
                }
            }
        }
        let out = Array::new(vec![b, c, h, w], out)?;
        let ng = self.needs(x) || self.needs(gate);
        self.push(OP, out, Op::MulBroadcast { x, gate }, ng)
    }

    /// Batch normalization over batch and space per channel.
    ///
    /// Train mode uses batch statistics (and records a [`StatUpdate`]); eval
    /// mode uses the stored running statistics.
    pub fn batch_norm(&mut self, x: Var, args: &BatchNormArgs) -> Result<Var> {
        const OP: &str = "batch_norm";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        let s = h * w;
        if self.value(args.gamma).len() != c || self.value(args.beta).len() != c {
            return Err(shape_err(OP, format!("scale/shift must have {c} entries (axis 1 of input)")));
        }
        let eps = T::lit(args.eps);
        let train = self.mode == Mode::Train;
        let (mean, var) = if train {
            if b * s < 2 {
                return Err(TensorError::DegenerateBatch { count: b * s });
            }
            let stats = norm::channel_stats(self.value(x).data(), b, c, s);
            let n = T::lit((b * s) as f64);
            let unbiased = stats.var.iter().map(|&v| v * n / (n - T::one())).collect();
            self.stat_updates.push(StatUpdate {
                mean_id: args.running_mean,
                var_id: args.running_var,
                mean: stats.mean.clone(),
                var: unbiased,
                momentum: T::lit(args.momentum),
            });
            (stats.mean, stats.var)
        } else {
            let m = self.param_value(args.running_mean)?.data().to_vec();
            let v = self.param_value(args.running_var)?.data().to_vec();
            (m, v)
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (out, xhat) = norm::normalize(
            self.value(x).data(),
            (b, c, s),
            &mean,
            &inv_std,
            self.value(args.gamma).data(),
            self.value(args.beta).data(),
        );
        let out = Array::new(vec![b, c, h, w], out)?;
        let ng = self.needs(x) || self.needs(args.gamma) || self.needs(args.beta);
        let op = Op::BatchNorm { x, gamma: args.gamma, beta: args.beta, xhat, inv_std, train };
        self.push(OP, out, op, ng)
    }

    /// Inverted dropout: survivors are rescaled by `1 / (1 - rate)`. Identity
    /// in eval mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(arg_err("dropout", format!("rate must be in [0, 1), got {rate}")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask: Vec<T> =
            (0..n).map(|_| if self.rng.gen::<f64>() < rate { T::zero() } else { keep }).collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Array::new(xv.shape().to_vec(), data)?;
        let ng = self.needs(x);
        self.push("dropout", out, Op::Dropout { x, mask }, ng)
    }

    /// `B x C x H x W -> B x C` spatial average.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("spatial_mean")?;
        let s = h * w;
        let inv = T::one() / T::lit(s as f64);
        let data = self.value(x).data().chunks(s).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        let out = Array::new(vec![b, c], data)?;
        let ng = self.needs(x);
        self.push("spatial_mean", out, Op::SpatialMean(x), ng)
    }

    /// Non-overlapping 2x2 max pooling (odd trailing rows/cols are dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "max_pool2";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(shape_err(OP, format!("spatial dims {h} x {w} too small")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for p in 0..b * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[i] > xv[best] {
                            best = i;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Array::new(vec![b, c, ho, wo], out)?;
        let ng = self.needs(x);
        self.push(OP, out, Op::MaxPool2 { x, argmax }, ng)
    }

    /// `sum_ij w(i,j) x(:,i,j) / (sum_ij w(i,j) + eps)` per item.
    ///
    /// `x` is `B x C x H x W`, `w` is `B x 1 x H x W` with nonnegative
    /// entries. An item whose weights are all zero falls back to the plain
    /// spatial mean and is reported in [`Graph::diagnostics`].
    pub fn weighted_pool(&mut self, x: Var, w: Var, eps: f64) -> Result<Var> {
        const OP: &str = "weighted_pool";
        let (b, c, h, wd) = self.value(x).dims4(OP)?;
        if self.value(w).dims4(OP)? != (b, 1, h, wd) {
            return Err(shape_err(OP, format!("weight {:?} must be {b} x 1 x {h} x {wd}", self.shape(w))));
        }
        let s = h * wd;
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        if wv.iter().any(|&v| v < T::zero()) {
            return Err(arg_err(OP, "weights must be nonnegative"));
        }
        let eps = T::lit(eps);
        let mut out = vec![T::zero(); b * c];
        let mut denom = Vec::with_capacity(b);
        let mut fallbacks = Vec::new();
        for bi in 0..b {
            let wb = &wv[bi * s..(bi + 1) * s];
            let total: T = wb.iter().copied().sum();
            let d = if total > T::zero() { Some(total + eps) } else { None };
            if d.is_none() {
                fallbacks.push(bi);
            }
            for ch in 0..c {
                let xb = &xv[(bi * c + ch) * s..(bi * c + ch + 1) * s];
                out[bi * c + ch] = match d {
                    Some(d) => xb.iter().zip(wb).map(|(&a, &b)| a * b).sum::<T>() / d,
                    None => xb.iter().copied().sum::<T>() / T::lit(s as f64),
                };
            }
            denom.push(d);
        }
        for bi in fallbacks {
            self.diagnostics.push(Diagnostic { op: OP, message: format!("item {bi}: all-zero weights, used mean") });
        }
        let out = Array::new(vec![b, c], out)?;
        let ng = self.needs(x) || self.needs(w);
        self.push(OP, out, Op::WeightedPool { x, w, denom }, ng)
    }

    /// Normalizes every `H x W` plane of a nonnegative map to sum to one:
    /// `a / sum(a)`. A plane whose mass is at most `eps` becomes uniform
    /// (reported in diagnostics).
    pub fn spatial_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        const OP: &str = "spatial_normalize";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        let s = h * w;
        let eps = T::lit(eps);
        let mut out = Vec::with_capacity(b * c * s);
        let mut denom = Vec::with_capacity(b * c);
        let mut fallbacks = Vec::new();
        for (p, plane) in self.value(x).data().chunks(s).enumerate() {
            let total: T = plane.iter().copied().sum();
            if total > eps {
                out.extend(plane.iter().map(|&v| v / total));
                denom.push(Some(total));
            } else {
                out.extend(std::iter::repeat(T::one() / T::lit(s as f64)).take(s));
                denom.push(None);
                fallbacks.push(p);
            }
        }
        for p in fallbacks {
            self.diagnostics.push(Diagnostic { op: OP, message: format!("plane {p}: mass at most eps, used uniform") });
        }
        let out = Array::new(vec![b, c, h, w], out)?;
        let ng = self.needs(x);
        self.push(OP, out, Op::SpatialNormalize { x, denom }, ng)
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("upsample2")?;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); b * c * 4 * h * w];
        for p in 0..b * c {
            for y in 0..2 * h {
                for xo in 0..2 * w {
                    out[p * 4 * h * w + y * 2 * w + xo] = xv[p * h * w + (y / 2) * w + xo / 2];
                }
            }
        }
        let out = Array::new(vec![b, c, 2 * h, 2 * w], out)?;
        let ng = self.needs(x);
        self.push("upsample2", out, Op::Upsample2(x), ng)
    }

    /// Concatenates along axis 1. All inputs must agree on axis 0 and on
    /// every axis after 1.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        const OP: &str = "concat";
        let first = inputs.first().ok_or_else(|| arg_err(OP, "no inputs"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() < 2 {
            return Err(shape_err(OP, format!("rank must be >= 2, got {s0:?}")));
        }
        let rows = s0[0];
        let inner: usize = s0[2..].iter().product();
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != s0.len() || s[0] != rows || s[2..] != s0[2..] {
                return Err(shape_err(OP, format!("{s:?} incompatible with {s0:?} outside axis 1")));
            }
            widths.push(s[1] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &wd) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[r * wd..(r + 1) * wd]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total / inner;
        let out = Array::new(shape, out)?;
        let ng = inputs.iter().any(|&v| self.needs(v));
        self.push(OP, out, Op::Concat { inputs: inputs.to_vec(), widths }, ng)
    }

    /// Rows of `x` along axis 0, in the order given (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = shape[0];
        let width: usize = shape[1..].iter().product();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("index {bad} out of range for axis 0 of {shape:?}")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * width);
        for &i in index {
            out.extend_from_slice(&xv[i * width..(i + 1) * width]);
        }
        let mut s = shape;
        s[0] = index.len();
        let out = Array::new(s, out)?;
        let ng = self.needs(x);
        self.push("gather_rows", out, Op::GatherRows { x, index: index.to_vec() }, ng)
    }

    /// Picks `(item, channel)` planes of a `B x C x H x W` tensor into an
    /// `O x 1 x H x W` tensor.
    pub fn select_channels(&mut self, x: Var, picks: &[(usize, usize)]) -> Result<Var> {
        const OP: &str = "select_channels";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        if let Some(p) = picks.iter().find(|p| p.0 >= b || p.1 >= c) {
            return Err(shape_err(OP, format!("pick {p:?} out of range for {b} x {c} (axes 0, 1)")));
        }
        let s = h * w;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(picks.len() * s);
        for &(bi, ch) in picks {
            out.extend_from_slice(&xv[(bi * c + ch) * s..(bi * c + ch + 1) * s]);
        }
        let out = Array::new(vec![picks.len(), 1, h, w], out)?;
        let ng = self.needs(x);
        self.push(OP, out, Op::SelectChannels { x, picks: picks.to_vec() }, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        let ng = self.needs(x);
        self.push("reshape", out, Op::Reshape(x), ng)
    }

    /// Linear combination of shared bases: `out[o] = sum_j m[o, j] * p[owner[o], j]`.
    ///
    /// `p` is `B x k x F x N`, `m` is `O x k`; output is `O x F x N`.
    pub fn basis_combine(&mut self, p: Var, m: Var, owner: &[usize]) -> Result<Var> {
        const OP: &str = "basis_combine";
        let (b, k, f, n) = self.value(p).dims4(OP)?;
        let ms = self.shape(m).to_vec();
        if ms.len() != 2 || ms[1] != k || ms[0] != owner.len() {
            return Err(shape_err(
                OP,
                format!("coefficients {ms:?} must be {} x {k} (axis 1 = basis count of {:?})", owner.len(), self.shape(p)),
            ));
        }
        if let Some(&bad) = owner.iter().find(|&&o| o >= b) {
            return Err(shape_err(OP, format!("owner {bad} out of range for {b} basis sets")));
        }
        let s = f * n;
        let (pv, mv) = (self.value(p).data(), self.value(m).data());
        let mut out = vec![T::zero(); owner.len() * s];
        for (o, &bi) in owner.iter().enumerate() {
            gemm(1, k, s, T::one(), &mv[o * k..(o + 1) * k], false, &pv[bi * k * s..(bi + 1) * k * s], false, T::zero(), &mut out[o * s..(o + 1) * s]);
        }
        let out = Array::new(vec![owner.len(), f, n], out)?;
        let ng = self.needs(p) || self.needs(m);
        self.push(OP, out, Op::BasisCombine { p, m, owner: owner.to_vec() }, ng)
    }

    /// Binary cross-entropy from logits against constant targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, z: Var, target: &[T], reduction: Reduction) -> Result<Var> {
        const OP: &str = "bce_with_logits";
        let zv = self.value(z).data();
        if zv.len() != target.len() {
            return Err(shape_err(OP, format!("{} logits vs {} targets", zv.len(), target.len())));
        }
        let total: T = zv.iter().zip(target).map(|(&a, &y)| bce_with_logits(a, y)).sum();
        let scale = match reduction {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::one() / T::lit(target.len() as f64),
        };
        let ng = self.needs(z);
        self.push(OP, Array::scalar(total * scale), Op::BceWithLogits { z, target: target.to_vec(), scale }, ng)
    }

    /// Mean absolute difference against constant targets.
    pub fn l1_loss(&mut self, x: Var, target: &[T]) -> Result<Var> {
        const OP: &str = "l1_loss";
        let xv = self.value(x).data();
        if xv.len() != target.len() {
            return Err(shape_err(OP, format!("{} values vs {} targets", xv.len(), target.len())));
        }
        let total: T = xv.iter().zip(target).map(|(&a, &y)| (a - y).abs()).sum();
        let ng = self.needs(x);
        let v = total / T::lit(target.len() as f64);
        self.push(OP, Array::scalar(v), Op::L1 { x, target: target.to_vec() }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v: T = self.value(x).data().iter().copied().sum();
        let ng = self.needs(x);
        self.push("sum", Array::scalar(v), Op::Sum(x, T::one()), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::lit(self.value(x).len() as f64);
        let v: T = self.value(x).data().iter().copied().sum::<T>() / n;
        let ng = self.needs(x);
        self.push("mean", Array::scalar(v), Op::Sum(x, T::one() / n), ng)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf = vec![None; self.nodes.len()];
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            match &node.op {
                Op::Leaf => leaf[i] = Some(Array::new(node.value.shape().to_vec(), g)?),
                op => self.backprop(op, &node.value, g, &mut grads)?,
            }
        }
        let params = self.param_vars.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { leaf, params })
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.value(v).len()]);
        f(slot);
    }

    fn backprop(&self, op: &Op<T>, out: &Array<T>, g: Vec<T>, grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match op {
            Op::Leaf => unreachable!(),
            Op::Conv2d { x, w, b, stride, pad } => {
                let need = (self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b)));
                let cg = conv::conv2d_backward(self.value(*x), self.value(*w), &g, *stride, *pad, need)?;
                self.conv_acc(grads, *x, *w, *b, cg);
            }
            Op::ConvT2d { x, w, b, stride } => {
                let need = (self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b)));
                let cg = conv::conv_t_backward(self.value(*x), self.value(*w), &g, *stride, need)?;
                self.conv_acc(grads, *x, *w, *b, cg);
            }
            Op::Relu(x) => {
                let d = g.iter().zip(out.data()).map(|(&g, &y)| if y > T::zero() { g } else { T::zero() }).collect();
                self.acc(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.iter().zip(out.data()).map(|(&g, &y)| g * y * (T::one() - y)).collect();
                self.acc(grads, *x, d);
            }
            Op::Add(a, b) => {
                self.acc(grads, *b, g.clone());
                self.acc(grads, *a, g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *b, g.iter().map(|&v| -v).collect());
                self.acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, g.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                self.acc(grads, *b, g.iter().zip(va).map(|(&g, &x)| g * x).collect());
            }
            Op::Scale(x, s) => self.acc(grads, *x, g.iter().map(|&v| v * *s).collect()),
            Op::MulBroadcast { x, gate } => {
                let (b, c, h, w) = dims4(out.shape(), "mul_broadcast")?;
                let s = h * w;
                let (xv, gv) = (self.value(*x).data(), self.value(*gate).data());
                self.acc_with(grads, *gate, |dg| {
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * s;
                            for i in 0..s {
                                dg[bi * s + i] += g[off + i] * xv[off + i];
                            }
                        }
                    }
                });
                self.acc_with(grads, *x, |dx| {
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * s;
                            for i in 0..s {
                                dx[off + i] += g[off + i] * gv[bi * s + i];
                            }
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (b, c, h, w) = dims4(out.shape(), "batch_norm")?;
                let dims = (b, c, h * w);
                let gm = self.value(*gamma).data();
                let ng = if *train {
                    norm::train_backward(&g, xhat, inv_std, gm, dims)
                } else {
                    norm::eval_backward(&g, xhat, inv_std, gm, dims)
                };
                self.acc(grads, *x, ng.dx);
                self.acc(grads, *gamma, ng.dgamma);
                self.acc(grads, *beta, ng.dbeta);
            }
            Op::Dropout { x, mask } => self.acc(grads, *x, g.iter().zip(mask).map(|(&g, &m)| g * m).collect()),
            Op::SpatialMean(x) => {
                let s = self.value(*x).len() / g.len();
                let inv = T::one() / T::lit(s as f64);
                let d = g.iter().flat_map(|&v| std::iter::repeat(v * inv).take(s)).collect();
                self.acc(grads, *x, d);
            }
            Op::MaxPool2 { x, argmax } => {
                self.acc_with(grads, *x, |dx| {
                    for (&i, &gv) in argmax.iter().zip(&g) {
                        dx[i] += gv;
                    }
                });
            }
            Op::WeightedPool { x, w, denom } => {
                let (b, c, h, wd) = self.value(*x).dims4("weighted_pool")?;
                let s = h * wd;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                self.acc_with(grads, *x, |dx| {
                    for bi in 0..b {
                        for ch in 0..c {
                            let gv = g[bi * c + ch];
                            let off = (bi * c + ch) * s;
                            match denom[bi] {
                                Some(d) => (0..s).for_each(|i| dx[off + i] += gv * wv[bi * s + i] / d),
                                None => (0..s).for_each(|i| dx[off + i] += gv / T::lit(s as f64)),
                            }
                        }
                    }
                });
                self.acc_with(grads, *w, |dw| {
                    for bi in 0..b {
                        let Some(d) = denom[bi] else { continue };
                        for ch in 0..c {
                            let gv = g[bi * c + ch];
                            let y = out.data()[bi * c + ch];
                            let off = (bi * c + ch) * s;
                            for i in 0..s {
                                dw[bi * s + i] += gv * (xv[off + i] - y) / d;
                            }
                        }
                    }
                });
            }
            Op::SpatialNormalize { x, denom } => {
                let s = out.len() / denom.len();
                let y = out.data();
                self.acc_with(grads, *x, |dx| {
                    for (p, d) in denom.iter().enumerate() {
                        let Some(d) = *d else { continue };
                        let off = p * s;
                        let dot: T = (off..off + s).map(|i| g[i] * y[i]).sum();
                        for i in off..off + s {
                            dx[i] += (g[i] - dot) / d;
                        }
                    }
                });
            }
            Op::Upsample2(x) => {
                let (b, c, h, w) = self.value(*x).dims4("upsample2")?;
                self.acc_with(grads, *x, |dx| {
                    for p in 0..b * c {
                        for y in 0..2 * h {
                            for xo in 0..2 * w {
                                dx[p * h * w + (y / 2) * w + xo / 2] += g[p * 4 * h * w + y * 2 * w + xo];
                            }
                        }
                    }
                });
            }
            Op::Concat { inputs, widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut start = 0;
                for (&v, &wd) in inputs.iter().zip(widths) {
                    let st = start;
                    self.acc_with(grads, v, |dv| {
                        for r in 0..rows {
                            let src = &g[r * total + st..r * total + st + wd];
                            dv[r * wd..(r + 1) * wd].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                        }
                    });
                    start += wd;
                }
            }
            Op::GatherRows { x, index } => {
                let width = g.len() / index.len().max(1);
                self.acc_with(grads, *x, |dx| {
                    for (r, &i) in index.iter().enumerate() {
                        let src = &g[r * width..(r + 1) * width];
                        dx[i * width..(i + 1) * width].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                    }
                });
            }
            Op::SelectChannels { x, picks } => {
                let (_, c, h, w) = self.value(*x).dims4("select_channels")?;
                let s = h * w;
                self.acc_with(grads, *x, |dx| {
                    for (o, &(bi, ch)) in picks.iter().enumerate() {
                        let dst = &mut dx[(bi * c + ch) * s..(bi * c + ch + 1) * s];
                        dst.iter_mut().zip(&g[o * s..(o + 1) * s]).for_each(|(a, &b)| *a += b);
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, g),
            Op::BasisCombine { p, m, owner } => {
                let (_, k, f, n) = self.value(*p).dims4("basis_combine")?;
                let s = f * n;
                let (pv, mv) = (self.value(*p).data(), self.value(*m).data());
                self.acc_with(grads, *m, |dm| {
                    for (o, &bi) in owner.iter().enumerate() {
                        let pb = &pv[bi * k * s..(bi + 1) * k * s];
                        gemm(k, s, 1, T::one(), pb, false, &g[o * s..(o + 1) * s], false, T::one(), &mut dm[o * k..(o + 1) * k]);
                    }
                });
                self.acc_with(grads, *p, |dp| {
                    for (o, &bi) in owner.iter().enumerate() {
                        let dpb = &mut dp[bi * k * s..(bi + 1) * k * s];
                        gemm(k, 1, s, T::one(), &mv[o * k..(o + 1) * k], false, &g[o * s..(o + 1) * s], false, T::one(), dpb);
                    }
                });
            }
            Op::BceWithLogits { z, target, scale } => {
                let k = g[0] * *scale;
                let d = self.value(*z).data().iter().zip(target).map(|(&a, &y)| k * (sigmoid(a) - y)).collect();
                self.acc(grads, *z, d);
            }
            Op::L1 { x, target } => {
                let k = g[0] / T::lit(target.len() as f64);
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&a, &y)| {
                        let diff = a - y;
                        if diff > T::zero() {
                            k
                        } else if diff < T::zero() {
                            -k
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.acc(grads, *x, d);
            }
            Op::Sum(x, s) => {
                let n = self.value(*x).len();
                self.acc(grads, *x, vec![g[0] * *s; n]);
            }
        }
        Ok(())
    }

    fn conv_acc(&self, grads: &mut [Option<Vec<T>>], x: Var, w: Var, b: Option<Var>, cg: conv::ConvGrads<T>) {
        if let Some(dx) = cg.dx {
            self.acc(grads, x, dx);
        }
        if let Some(dw) = cg.dw {
            self.acc(grads, w, dw);
        }
        if let (Some(b), Some(db)) = (b, cg.db) {
            self.acc(grads, b, db);
        }
    }
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients<T> {
    leaf: Vec<Option<Array<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Array<T>> {
        self.leaf.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of every parameter that took part in the pass, in id order.
    pub fn params(&self) -> Vec<(ParamId, &Array<T>)> {
        let mut out: Vec<_> =
            self.params.iter().filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g))).collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn param(&self, id: ParamId) -> Option<&Array<T>> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, v)| self.wrt(v))
    }
}
