//! 1-D convolution kernels over `[batch, channels, length]` buffers.
//!
//! Both directions fold the batch into the GEMM column dimension so a layer
//! costs one large matrix product instead of `batch` small ones.

use crate::real::{gemm, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn conv_out_len(len_in: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len_in + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `col[(ci*k + kk), b*len_out + lo] = x[b, ci, lo*stride + kk - padding]`.
fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.batch * g.len_out;
    let mut col = vec![T::zero(); g.c_in * g.kernel * cols];
    for ci in 0..g.c_in {
        for kk in 0..g.kernel {
            let row = &mut col[(ci * g.kernel + kk) * cols..(ci * g.kernel + kk + 1) * cols];
            for b in 0..g.batch {
                let xs = &x[(b * g.c_in + ci) * g.len_in..(b * g.c_in + ci + 1) * g.len_in];
                let dst = &mut row[b * g.len_out..(b + 1) * g.len_out];
                for (lo, d) in dst.iter_mut().enumerate() {
                    let pos = (lo * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.len_in {
                        *d = xs[pos as usize];
                    }
                }
            }
        }
    }
    col
}

fn col2im_add<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let cols = g.batch * g.len_out;
    for ci in 0..g.c_in {
        for kk in 0..g.kernel {
            let row = &col[(ci * g.kernel + kk) * cols..(ci * g.kernel + kk + 1) * cols];
            for b in 0..g.batch {
                let xs = &mut dx[(b * g.c_in + ci) * g.len_in..(b * g.c_in + ci + 1) * g.len_in];
                let src = &row[b * g.len_out..(b + 1) * g.len_out];
                for (lo, &s) in src.iter().enumerate() {
                    let pos = (lo * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.len_in {
                        xs[pos as usize] += s;
                    }
                }
            }
        }
    }
}

/// `[batch, c, len]` -> `[c, batch*len]`.
fn to_channel_major<T: Real>(x: &[T], batch: usize, c: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let src = &x[(b * c + ch) * len..(b * c + ch + 1) * len];
            out[ch * batch * len + b * len..ch * batch * len + (b + 1) * len].copy_from_slice(src);
        }
    }
    out
}

/// `[c, batch*len]` -> `[batch, c, len]`.
fn from_channel_major<T: Real>(x: &[T], batch: usize, c: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ch in 0..c {
        for b in 0..batch {
            let src = &x[ch * batch * len + b * len..ch * batch * len + (b + 1) * len];
            out[(b * c + ch) * len..(b * c + ch + 1) * len].copy_from_slice(src);
        }
    }
    out
}

fn add_bias<T: Real>(out: &mut [T], bias: Option<&[T]>, batch: usize, c: usize, len: usize) {
    if let Some(bias) = bias {
        for b in 0..batch {
            for ch in 0..c {
                let bv = bias[ch];
                for v in &mut out[(b * c + ch) * len..(b * c + ch + 1) * len] {
                    *v += bv;
                }
            }
        }
    }
}

fn bias_grad<T: Real>(g: &[T], batch: usize, c: usize, len: usize) -> Vec<T> {
    let mut db = vec![T::zero(); c];
    for b in 0..batch {
        for (ch, d) in db.iter_mut().enumerate() {
            for &v in &g[(b * c + ch) * len..(b * c + ch + 1) * len] {
                *d += v;
            }
        }
    }
    db
}

/// Weight layout `[c_out, c_in, kernel]`.
pub(crate) fn conv1d_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let col = im2col(x, g);
    let cols = g.batch * g.len_out;
    let mut out2 = vec![T::zero(); g.c_out * cols];
    gemm(g.c_out, g.c_in * g.kernel, cols, w, false, &col, false, &mut out2, T::zero());
    let mut out = from_channel_major(&out2, g.batch, g.c_out, g.len_out);
    add_bias(&mut out, bias, g.batch, g.c_out, g.len_out);
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let cols = g.batch * g.len_out;
    let g2 = to_channel_major(gout, g.batch, g.c_out, g.len_out);
    let dw = need.1.then(|| {
        let col = im2col(x, g);
        let mut dw = vec![T::zero(); g.c_out * g.c_in * g.kernel];
        gemm(g.c_out, cols, g.c_in * g.kernel, &g2, false, &col, true, &mut dw, T::zero());
        dw
    });
    let dx = need.0.then(|| {
        let mut dcol = vec![T::zero(); g.c_in * g.kernel * cols];
        gemm(g.c_in * g.kernel, g.c_out, cols, w, true, &g2, false, &mut dcol, T::zero());
        let mut dx = vec![T::zero(); x.len()];
        col2im_add(&dcol, g, &mut dx);
        dx
    });
    let db = need.2.then(|| bias_grad(gout, g.batch, g.c_out, g.len_out));
    ConvGrads { dx, dw, db }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvTransposeGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub kernel: usize,
    pub stride: usize,
    pub crop_front: usize,
    pub len_out: usize,
}

impl ConvTransposeGeom {
    pub fn full_len(len_in: usize, kernel: usize, stride: usize) -> usize {
        (len_in - 1) * stride + kernel
    }
}

/// Weight layout `[c_in, c_out, kernel]`. The uncropped output has length
/// `(len_in - 1) * stride + kernel`; `crop_front` leading samples are dropped
/// and the result is truncated to `len_out`.
pub(crate) fn conv_transpose1d_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    g: &ConvTransposeGeom,
) -> Vec<T> {
    let n = g.batch * g.len_in;
    let xp = to_channel_major(x, g.batch, g.c_in, g.len_in);
    let mut cols = vec![T::zero(); g.c_out * g.kernel * n];
    gemm(g.c_out * g.kernel, g.c_in, n, w, true, &xp, false, &mut cols, T::zero());
    let mut out = vec![T::zero(); g.batch * g.c_out * g.len_out];
    for co in 0..g.c_out {
        for kk in 0..g.kernel {
            let row = &cols[(co * g.kernel + kk) * n..(co * g.kernel + kk + 1) * n];
            for b in 0..g.batch {
                let dst = &mut out[(b * g.c_out + co) * g.len_out..(b * g.c_out + co + 1) * g.len_out];
                for (li, &v) in row[b * g.len_in..(b + 1) * g.len_in].iter().enumerate() {
                    let pos = (li * g.stride + kk) as isize - g.crop_front as isize;
                    if pos >= 0 && (pos as usize) < g.len_out {
                        dst[pos as usize] += v;
                    }
                }
            }
        }
    }
    add_bias(&mut out, bias, g.batch, g.c_out, g.len_out);
    out
}

pub(crate) fn conv_transpose1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvTransposeGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let n = g.batch * g.len_in;
    let mut dcols = vec![T::zero(); g.c_out * g.kernel * n];
    for co in 0..g.c_out {
        for kk in 0..g.kernel {
            let row = &mut dcols[(co * g.kernel + kk) * n..(co * g.kernel + kk + 1) * n];
            for b in 0..g.batch {
                let src = &gout[(b * g.c_out + co) * g.len_out..(b * g.c_out + co + 1) * g.len_out];
                for (li, d) in row[b * g.len_in..(b + 1) * g.len_in].iter_mut().enumerate() {
                    let pos = (li * g.stride + kk) as isize - g.crop_front as isize;
                    if pos >= 0 && (pos as usize) < g.len_out {
                        *d = src[pos as usize];
                    }
                }
            }
        }
    }
    let dw = need.1.then(|| {
        let xp = to_channel_major(x, g.batch, g.c_in, g.len_in);
        let mut dw = vec![T::zero(); g.c_in * g.c_out * g.kernel];
        gemm(g.c_in, n, g.c_out * g.kernel, &xp, false, &dcols, true, &mut dw, T::zero());
        dw
    });
    let dx = need.0.then(|| {
        let mut dxp = vec![T::zero(); g.c_in * n];
        gemm(g.c_in, g.c_out * g.kernel, n, w, false, &dcols, false, &mut dxp, T::zero());
        from_channel_major(&dxp, g.batch, g.c_in, g.len_in)
    });
    let db = need.2.then(|| bias_grad(gout, g.batch, g.c_out, g.len_out));
    ConvGrads { dx, dw, db }
}
