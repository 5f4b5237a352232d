//! Convolution kernels (cross-correlation, no kernel flip) via im2col + gemm.

use crate::array::Array;
use crate::error::{arg_err, shape_err, Result};
use crate::real::{gemm, Real};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) fn conv_out_size(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(arg_err(op, "stride must be >= 1"));
    }
    if k > size + 2 * pad {
        return Err(shape_err(op, format!("kernel extent {k} exceeds padded input extent {}", size + 2 * pad)));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

fn im2col<T: Real>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let n = g.col_cols();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back into an image; the adjoint of `im2col`.
fn col2im<T: Real>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let n = g.col_cols();
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Array<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != channels {
            return Err(shape_err(op, format!("bias has {} entries, output has {channels} channels", b.len())));
        }
    }
    Ok(())
}

/// Returns `(batch, c_out, geometry)` for a conv2d call after validating shapes.
pub(crate) fn conv2d_geometry<T: Real>(
    x: &Array<T>,
    w: &Array<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, Geometry)> {
    const OP: &str = "conv2d";
    let (b, c, h, wd) = x.dims4(OP)?;
    let (co, ci, kh, kw) = w.dims4(OP)?;
    if ci != c {
        return Err(shape_err(OP, format!("input channels (axis 1) = {c}, kernel axis 1 = {ci}")));
    }
    let ho = conv_out_size(OP, h, kh, stride, pad)?;
    let wo = conv_out_size(OP, wd, kw, stride, pad)?;
    Ok((b, co, Geometry { c, h, w: wd, kh, kw, stride, pad, ho, wo }))
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Array<T>,
    w: &Array<T>,
    bias: Option<&Array<T>>,
    stride: usize,
    pad: usize,
) -> Result<Array<T>> {
    let (b, co, g) = conv2d_geometry(x, w, stride, pad)?;
    check_bias("conv2d", bias, co)?;
    let (rows, n) = (g.col_rows(), g.col_cols());
    let in_len = g.c * g.h * g.w;
    let mut out = vec![T::zero(); b * co * n];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * n] };
    for bi in 0..b {
        let xb = &x.data()[bi * in_len..(bi + 1) * in_len];
        let ob = &mut out[bi * co * n..(bi + 1) * co * n];
        if let Some(bias) = bias {
            for (oc, chunk) in ob.chunks_mut(n).enumerate() {
                chunk.fill(bias.data()[oc]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        gemm(co, rows, n, T::one(), w.data(), false, src, false, beta, ob);
    }
    Array::new(vec![b, co, g.ho, g.wo], out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Array<T>,
    w: &Array<T>,
    dout: &[T],
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let (b, co, g) = conv2d_geometry(x, w, stride, pad)?;
    let (rows, n) = (g.col_rows(), g.col_cols());
    let in_len = g.c * g.h * g.w;
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); w.len()]);
    let mut db = need.2.then(|| vec![T::zero(); co]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * n }];
    let mut dcols = vec![T::zero(); if need.0 && !g.is_pointwise() { rows * n } else { 0 }];
    for bi in 0..b {
        let db_out = &dout[bi * co * n..(bi + 1) * co * n];
        if let Some(db) = db.as_mut() {
            for (oc, chunk) in db_out.chunks(n).enumerate() {
                db[oc] += chunk.iter().copied().sum::<T>();
            }
        }
        let xb = &x.data()[bi * in_len..(bi + 1) * in_len];
        if let Some(dw) = dw.as_mut() {
            let src: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut cols);
                &cols
            };
            gemm(co, n, rows, T::one(), db_out, false, src, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[bi * in_len..(bi + 1) * in_len];
            if g.is_pointwise() {
                gemm(rows, co, n, T::one(), w.data(), true, db_out, false, T::one(), dxb);
            } else {
                gemm(rows, co, n, T::one(), w.data(), true, db_out, false, T::zero(), &mut dcols);
                col2im(&dcols, &g, dxb);
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Geometry of the conv2d whose input-adjoint this transposed convolution is.
/// Kernel layout is `C_in x C_out x kh x kw` (input channels of the transposed op first).
pub(crate) fn conv_t_geometry<T: Real>(
    x: &Array<T>,
    w: &Array<T>,
    stride: usize,
) -> Result<(usize, usize, Geometry)> {
    const OP: &str = "conv_transpose2d";
    if stride == 0 {
        return Err(arg_err(OP, "stride must be >= 1"));
    }
    let (b, c, h, wd) = x.dims4(OP)?;
    let (ci, co, kh, kw) = w.dims4(OP)?;
    if ci != c {
        return Err(shape_err(OP, format!("input channels (axis 1) = {c}, kernel axis 0 = {ci}")));
    }
    let ho = (h - 1) * stride + kh;
    let wo = (wd - 1) * stride + kw;
    // Geometry of the output image seen as the input of the adjoint conv2d.
    Ok((b, ci, Geometry { c: co, h: ho, w: wo, kh, kw, stride, pad: 0, ho: h, wo: wd }))
}

pub(crate) fn conv_t_forward<T: Real>(
    x: &Array<T>,
    w: &Array<T>,
    bias: Option<&Array<T>>,
    stride: usize,
) -> Result<Array<T>> {
    let (b, ci, g) = conv_t_geometry(x, w, stride)?;
    check_bias("conv_transpose2d", bias, g.c)?;
    let (rows, n) = (g.col_rows(), g.col_cols());
    let out_len = g.c * g.h * g.w;
    let mut out = vec![T::zero(); b * out_len];
    let mut cols = vec![T::zero(); rows * n];
    for bi in 0..b {
        let xb = &x.data()[bi * ci * n..(bi + 1) * ci * n];
        gemm(rows, ci, n, T::one(), w.data(), true, xb, false, T::zero(), &mut cols);
        let ob = &mut out[bi * out_len..(bi + 1) * out_len];
        col2im(&cols, &g, ob);
        if let Some(bias) = bias {
            for (oc, chunk) in ob.chunks_mut(g.h * g.w).enumerate() {
                let bv = bias.data()[oc];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Array::new(vec![b, g.c, g.h, g.w], out)
}

pub(crate) fn conv_t_backward<T: Real>(
    x: &Array<T>,
    w: &Array<T>,
    dout: &[T],
    stride: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let (b, ci, g) = conv_t_geometry(x, w, stride)?;
    let (rows, n) = (g.col_rows(), g.col_cols());
    let out_len = g.c * g.h * g.w;
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); w.len()]);
    let mut db = need.2.then(|| vec![T::zero(); g.c]);
    let mut cols = vec![T::zero(); rows * n];
    for bi in 0..b {
        let dob = &dout[bi * out_len..(bi + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (oc, chunk) in dob.chunks(g.h * g.w).enumerate() {
                db[oc] += chunk.iter().copied().sum::<T>();
            }
        }
        if !(need.0 || need.1) {
            continue;
        }
        im2col(dob, &g, &mut cols);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[bi * ci * n..(bi + 1) * ci * n];
            gemm(ci, rows, n, T::one(), w.data(), false, &cols, false, T::zero(), dxb);
        }
        if let Some(dw) = dw.as_mut() {
            let xb = &x.data()[bi * ci * n..(bi + 1) * ci * n];
            gemm(ci, n, rows, T::one(), xb, false, &cols, true, T::one(), dw);
        }
    }
    Ok(ConvGrads { dx, dw, db })
}
