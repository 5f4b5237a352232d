use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, DspError, Result};

/// Upper bound reported for any metric, in dB.
pub const METRIC_CAP_DB: f64 = 300.0;

/// Estimate split into target, interference and artifact parts. All parts
/// have `len + filter_len - 1` samples (the estimate zero-padded).
#[derive(Clone, Debug, PartialEq)]
pub struct BssDecomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
    pub filter_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// Least-squares projector onto time-shifted copies of a fixed set of
/// references. Gram factorizations are computed once so many estimates can
/// be decomposed against the same mixture cheaply.
pub struct BssProjector {
    filter_len: usize,
    len: usize,
    nfft: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    refs_fft: Vec<Vec<Complex<f64>>>,
    all: Cholesky<f64, Dyn>,
    single: Vec<Cholesky<f64, Dyn>>,
}

impl BssProjector {
    pub fn new(references: &[Vec<f64>], filter_len: usize) -> Result<Self> {
        if references.is_empty() {
            return Err(invalid("bss_decompose", "no references"));
        }
        if filter_len == 0 {
            return Err(invalid("bss_decompose", "filter_len must be at least 1"));
        }
        let len = references[0].len();
        if len == 0 {
            return Err(invalid("bss_decompose", "references are empty"));
        }
        if let Some((i, r)) = references.iter().enumerate().find(|(_, r)| r.len() != len) {
            return Err(invalid("bss_decompose", format!("reference {i} has {} samples, reference 0 has {len}", r.len())));
        }
        let nfft = (len + filter_len - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        let ifft = planner.plan_fft_inverse(nfft);
        let refs_fft: Vec<_> = references.iter().map(|r| forward(&fft, r, nfft)).collect();

        let n = references.len();
        // corr[i][j][lag mod nfft] = sum_m r_i(m) r_j(m + lag)
        let mut corr = vec![vec![Vec::new(); n]; n];
        for i in 0..n {
            for j in i..n {
                let prod: Vec<_> = refs_fft[i].iter().zip(&refs_fft[j]).map(|(a, b)| a.conj() * b).collect();
                corr[i][j] = inverse(&ifft, prod);
            }
        }
        let l = filter_len;
        let lag = |i: usize, j: usize, d: isize| -> f64 {
            // corr_ji(d) = corr_ij(-d)
            let (c, d) = if i <= j { (&corr[i][j], d) } else { (&corr[j][i], -d) };
            c[d.rem_euclid(nfft as isize) as usize]
        };
        let gram = DMatrix::from_fn(n * l, n * l, |r, c| lag(r / l, c / l, (r % l) as isize - (c % l) as isize));
        let all = Cholesky::new(gram.clone()).ok_or(DspError::SingularGram { filter_len })?;
        let single = (0..n)
            .map(|i| {
                Cholesky::new(gram.view((i * l, i * l), (l, l)).into_owned()).ok_or(DspError::SingularGram { filter_len })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { filter_len, len, nfft, fft, ifft, refs_fft, all, single })
    }

    pub fn num_references(&self) -> usize {
        self.refs_fft.len()
    }

    pub fn decompose(&self, estimate: &[f64], target: usize) -> Result<BssDecomposition> {
        if estimate.len() != self.len {
            return Err(invalid("bss_decompose", format!("estimate has {} samples, references have {}", estimate.len(), self.len)));
        }
        if target >= self.num_references() {
            return Err(invalid("bss_decompose", format!("target {target} out of range for {} references", self.num_references())));
        }
        let l = self.filter_len;
        let est_fft = forward(&self.fft, estimate, self.nfft);
        let mut rhs = DVector::zeros(self.num_references() * l);
        for (i, rf) in self.refs_fft.iter().enumerate() {
            let prod: Vec<_> = rf.iter().zip(&est_fft).map(|(a, b)| a.conj() * b).collect();
            let c = inverse(&self.ifft, prod);
            rhs.rows_mut(i * l, l).copy_from_slice(&c[..l]);
        }
        let coef_all = self.all.solve(&rhs);
        let coef_target = self.single[target].solve(&rhs.rows(target * l, l).into_owned());

        let out_len = self.len + l - 1;
        let s_target = self.synthesize(&[(target, coef_target.as_slice())], out_len);
        let blocks: Vec<_> = (0..self.num_references()).map(|i| (i, &coef_all.as_slice()[i * l..(i + 1) * l])).collect();
        let proj_all = self.synthesize(&blocks, out_len);
        let e_interf: Vec<f64> = proj_all.iter().zip(&s_target).map(|(p, s)| p - s).collect();
        let e_artif = (0..out_len)
            .map(|n| estimate.get(n).copied().unwrap_or(0.0) - s_target[n] - e_interf[n])
            .collect();
        Ok(BssDecomposition { s_target, e_interf, e_artif, filter_len: l })
    }

    /// `sum_i sum_a coef_i[a] r_i(n - a)` via the cached reference spectra.
    fn synthesize(&self, blocks: &[(usize, &[f64])], out_len: usize) -> Vec<f64> {
        let mut acc = vec![Complex::new(0.0, 0.0); self.nfft];
        for &(i, coef) in blocks {
            let cf = forward(&self.fft, coef, self.nfft);
            for ((a, r), c) in acc.iter_mut().zip(&self.refs_fft[i]).zip(&cf) {
                *a += r * c;
            }
        }
        let mut out = inverse(&self.ifft, acc);
        out.truncate(out_len);
        out
    }
}

fn forward(fft: &Arc<dyn Fft<f64>>, x: &[f64], nfft: usize) -> Vec<Complex<f64>> {
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    fft.process(&mut buf);
    buf
}

fn inverse(ifft: &Arc<dyn Fft<f64>>, mut buf: Vec<Complex<f64>>) -> Vec<f64> {
    ifft.process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter().map(|z| z.re * scale).collect()
}

pub fn bss_decompose(estimate: &[f64], references: &[Vec<f64>], target: usize, filter_len: usize) -> Result<BssDecomposition> {
    BssProjector::new(references, filter_len)?.decompose(estimate, target)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// SDR, SIR and SAR in dB. Denominators are floored relative to the target
/// energy and every value is capped at [`METRIC_CAP_DB`].
pub fn metrics(d: &BssDecomposition) -> Result<Metrics> {
    let target = energy(&d.s_target);
    let total: f64 = energy(&d.e_artif) + target + energy(&d.e_interf);
    if !(target > 1e-20 * total) {
        return Err(DspError::ZeroTarget);
    }
    let floor = target * 10f64.powf(-METRIC_CAP_DB / 10.0);
    let db = |num: f64, den: f64| (10.0 * (num / den.max(floor)).log10()).min(METRIC_CAP_DB);
    let noise: Vec<f64> = d.e_interf.iter().zip(&d.e_artif).map(|(i, a)| i + a).collect();
    let filtered: Vec<f64> = d.s_target.iter().zip(&d.e_interf).map(|(s, i)| s + i).collect();
    Ok(Metrics {
        sdr: db(target, energy(&noise)),
        sir: db(target, energy(&d.e_interf)),
        sar: db(energy(&filtered), energy(&d.e_artif)),
    })
}

/// Best assignment of estimates to references.
#[derive(Clone, Debug, PartialEq)]
pub struct PairReport {
    /// `metrics[j]` scores estimate `permutation[j]` against reference `j`.
    pub metrics: Vec<Metrics>,
    pub permutation: Vec<usize>,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Exhaustive search over assignments, maximizing mean SIR. Pairs whose
/// estimate has no projection onto the reference rule out the assignments
/// that use them.
pub fn evaluate_pair(estimates: &[Vec<f64>], references: &[Vec<f64>], filter_len: usize) -> Result<PairReport> {
    if estimates.len() != references.len() || estimates.is_empty() {
        return Err(invalid(
            "evaluate_pair",
            format!("{} estimates for {} references", estimates.len(), references.len()),
        ));
    }
    BssProjector::new(references, filter_len)?.evaluate(estimates)
}

impl BssProjector {
    /// [`evaluate_pair`] against this projector's references.
    pub fn evaluate(&self, estimates: &[Vec<f64>]) -> Result<PairReport> {
        let n = self.num_references();
        if estimates.len() != n {
            return Err(invalid("evaluate_pair", format!("{} estimates for {n} references", estimates.len())));
        }
        let mut table = vec![vec![None; n]; n];
        for (e, est) in estimates.iter().enumerate() {
            for (r, slot) in table[e].iter_mut().enumerate() {
                *slot = match metrics(&self.decompose(est, r)?) {
                    Ok(m) => Some(m),
                    Err(DspError::ZeroTarget) => None,
                    Err(err) => return Err(err),
                };
            }
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in permutations(n) {
            let scores: Option<Vec<f64>> = perm.iter().enumerate().map(|(r, &e)| table[e][r].map(|m| m.sir)).collect();
            if let Some(s) = scores {
                let mean = s.iter().sum::<f64>() / n as f64;
                if best.as_ref().is_none_or(|(b, _)| mean > *b) {
                    best = Some((mean, perm));
                }
            }
        }
        let (_, permutation) = best.ok_or(DspError::ZeroTarget)?;
        let metrics = permutation.iter().enumerate().map(|(r, &e)| table[e][r].unwrap()).collect();
        Ok(PairReport { metrics, permutation })
    }

    /// Metrics of one estimate against one reference.
    pub fn score(&self, estimate: &[f64], target: usize) -> Result<Metrics> {
        metrics(&self.decompose(estimate, target)?)
    }
}
