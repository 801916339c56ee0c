//! Raw forward/backward kernels over contiguous NCHW buffers.

use crate::Scalar;

pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one image (C×H×W) into a (C·k·k) × (Ho·Wo) patch matrix.
pub(crate) fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let l = g.col_cols();
    for c in 0..g.cin {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back into the image gradient.
pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let l = g.col_cols();
    for c in 0..g.cin {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `x` is B×Cin×H×W, `w` is Cout×Cin×k×k, `out` is B×Cout×Ho×Wo.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    w: &[T],
    cout: usize,
    bias: Option<&[T]>,
    g: &ConvGeom,
    out: &mut [T],
) {
    let in_len = g.cin * g.h * g.w;
    let out_len = cout * g.col_cols();
    let (rows, l) = (g.col_rows(), g.col_cols());
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * l] };
    for b in 0..batch {
        let img = &x[b * in_len..(b + 1) * in_len];
        let patches: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(img, g, &mut cols);
            &cols
        };
        let o = &mut out[b * out_len..(b + 1) * out_len];
        T::gemm(cout, rows, l, w, (rows as isize, 1), patches, (l as isize, 1), o, (l as isize, 1), false);
        if let Some(bias) = bias {
            for (co, chunk) in o.chunks_mut(l).enumerate() {
                let bv = bias[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

/// Accumulates gradients of a convolution into `dx`, `dw` and `db`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    w: &[T],
    cout: usize,
    g: &ConvGeom,
    dout: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let in_len = g.cin * g.h * g.w;
    let (rows, l) = (g.col_rows(), g.col_cols());
    let out_len = cout * l;
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * l }];
    let mut dcols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * l }];
    let mut dx = dx;
    let mut dw = dw;
    if let Some(db) = db {
        for b in 0..batch {
            let d = &dout[b * out_len..(b + 1) * out_len];
            for (co, chunk) in d.chunks(l).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    for b in 0..batch {
        let img = &x[b * in_len..(b + 1) * in_len];
        let d = &dout[b * out_len..(b + 1) * out_len];
        if let Some(dw) = dw.as_deref_mut() {
            let patches: &[T] = if g.is_pointwise() {
                img
            } else {
                im2col(img, g, &mut cols);
                &cols
            };
            // dW (cout×rows) += dOut (cout×l) · patchesᵀ (l×rows)
            T::gemm(cout, l, rows, d, (l as isize, 1), patches, (1, l as isize), dw, (rows as isize, 1), true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dimg = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                // dX (rows×l) += Wᵀ (rows×cout) · dOut (cout×l)
                T::gemm(rows, cout, l, w, (1, rows as isize), d, (l as isize, 1), dimg, (l as isize, 1), true);
            } else {
                T::gemm(rows, cout, l, w, (1, rows as isize), d, (l as isize, 1), &mut dcols, (l as isize, 1), false);
                col2im_add(&dcols, g, dimg);
            }
        }
    }
}

/// Source taps for one axis of half-pixel-centred bilinear resampling:
/// `(lo, hi, weight_of_hi)` per output index.
pub(crate) fn bilinear_taps<T: Scalar>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = if lo + 1 < in_len { lo + 1 } else { lo };
            (lo, hi, T::lit(src - lo as f64))
        })
        .collect()
}

/// Resamples every H×W plane in `src` to Ho×Wo.
pub(crate) fn resize_planes<T: Scalar>(
    src: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    dst: &mut [T],
) {
    let ty = bilinear_taps::<T>(h, ho);
    let tx = bilinear_taps::<T>(w, wo);
    for p in 0..planes {
        let s = &src[p * h * w..(p + 1) * h * w];
        let d = &mut dst[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let hy = T::one() - ly;
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let hx = T::one() - lx;
                d[oy * wo + ox] =
                    hy * (hx * s[y0 * w + x0] + lx * s[y0 * w + x1]) + ly * (hx * s[y1 * w + x0] + lx * s[y1 * w + x1]);
            }
        }
    }
}

/// Adjoint of [`resize_planes`].
pub(crate) fn resize_planes_backward<T: Scalar>(
    dout: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    dsrc: &mut [T],
) {
    let ty = bilinear_taps::<T>(h, ho);
    let tx = bilinear_taps::<T>(w, wo);
    for p in 0..planes {
        let d = &dout[p * ho * wo..(p + 1) * ho * wo];
        let s = &mut dsrc[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let hy = T::one() - ly;
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let hx = T::one() - lx;
                let g = d[oy * wo + ox];
                s[y0 * w + x0] += hy * hx * g;
                s[y0 * w + x1] += hy * lx * g;
                s[y1 * w + x0] += ly * hx * g;
                s[y1 * w + x1] += ly * lx * g;
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
