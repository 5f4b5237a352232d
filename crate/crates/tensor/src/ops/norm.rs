use crate::real::Real;

/// Per-channel statistics over batch and space for `B x C x S` data.
pub(crate) struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance, used for normalization.
    pub var: Vec<T>,
}

pub(crate) fn channel_stats<T: Real>(x: &[T], b: usize, c: usize, s: usize) -> BatchStats<T> {
    let count = T::lit((b * s) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for bi in 0..b {
            let off = (bi * c + ch) * s;
            acc += x[off..off + s].iter().copied().sum::<T>();
        }
        let m = acc / count;
        let mut sq = T::zero();
        for bi in 0..b {
            let off = (bi * c + ch) * s;
            sq += x[off..off + s].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    BatchStats { mean, var }
}

/// Applies `gamma * (x - mean) * inv_std + beta`; returns output and `xhat`.
pub(crate) fn normalize<T: Real>(
    x: &[T],
    (b, c, s): (usize, usize, usize),
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * s;
            for i in off..off + s {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (out, xhat)
}

pub(crate) struct NormGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

/// Backward of train-mode normalization (statistics depend on `x`).
pub(crate) fn train_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    (b, c, s): (usize, usize, usize),
) -> NormGrads<T> {
    let m = T::lit((b * s) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * s;
            for i in off..off + s {
                dbeta[ch] += dy[i];
                dgamma[ch] += dy[i] * xhat[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for bi in 0..b {
        for ch in 0..c {
            let k = gamma[ch] * inv_std[ch] / m;
            let off = (bi * c + ch) * s;
            for i in off..off + s {
                dx[i] = k * (m * dy[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
            }
        }
    }
    NormGrads { dx, dgamma, dbeta }
}

/// Backward of eval-mode normalization (frozen statistics, affine in `x`).
pub(crate) fn eval_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    (b, c, s): (usize, usize, usize),
) -> NormGrads<T> {
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = vec![T::zero(); dy.len()];
    for bi in 0..b {
        for ch in 0..c {
            let k = gamma[ch] * inv_std[ch];
            let off = (bi * c + ch) * s;
            for i in off..off + s {
                dbeta[ch] += dy[i];
                dgamma[ch] += dy[i] * xhat[i];
                dx[i] = dy[i] * k;
            }
        }
    }
    NormGrads { dx, dgamma, dbeta }
}
