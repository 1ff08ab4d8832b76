//! im2col convolution kernels on raw NCHW buffers.
//!
//! Work is split per sample with rayon. Kernel-gradient reductions are summed
//! over fixed-size sample groups in index order, so results do not depend on
//! the number of worker threads.

use rayon::prelude::*;

use super::Scalar;

/// Samples per partial kernel-gradient accumulator.
const REDUCE_GROUP: usize = 16;

/// Geometry of one convolution: an image side `(channels, h, w)` and a patch
/// grid `(ho, wo)` produced by sliding a `k x k` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Patch grid for a strided, zero-padded window. `None` when the output
    /// would have no rows or columns.
    pub fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(ConvGeom { channels, h, w, k, stride, pad, ho, wo })
    }

    /// Image size recovered by a transposed convolution from an `h x w` grid.
    pub fn transposed(channels: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 {
            return None;
        }
        let full_h = (h - 1) * stride + k;
        let full_w = (w - 1) * stride + k;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return None;
        }
        let g = ConvGeom::new(channels, full_h - 2 * pad, full_w - 2 * pad, k, stride, pad)?;
        (g.ho == h && g.wo == w).then_some(g)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.h * self.w
    }
}

pub fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let out = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &img[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column buffer back onto an image (adjoint of `im2col`).
pub fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, img: &mut [T]) {
    img.fill(T::zero());
    let cols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            img[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y[b] = kernel[F, C*k*k] @ im2col(x[b])`, output `[B, F, ho, wo]`.
pub fn conv2d_forward<T: Scalar>(x: &[T], kernel: &[T], filters: usize, g: &ConvGeom, batch: usize) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut y = vec![T::zero(); batch * filters * cols];
    y.par_chunks_mut(filters * cols)
        .zip(x.par_chunks(g.image_len()))
        .for_each_init(
            || vec![T::zero(); rows * cols],
            |col, (yb, xb)| {
                im2col(xb, g, col);
                T::gemm(filters, rows, cols, T::one(), kernel, rows, 1, col, cols, 1, T::zero(), yb, cols, 1);
            },
        );
    y
}

/// Gradients of `conv2d_forward` with respect to input and kernel.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    filters: usize,
    g: &ConvGeom,
    batch: usize,
) -> (Vec<T>, Vec<T>) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let ylen = filters * cols;
    let mut dx = vec![T::zero(); batch * g.image_len()];
    let partials: Vec<Vec<T>> = dx
        .par_chunks_mut(REDUCE_GROUP * g.image_len())
        .enumerate()
        .map(|(gi, dx_group)| {
            let mut dk = vec![T::zero(); filters * rows];
            let mut col = vec![T::zero(); rows * cols];
            let mut dcol = vec![T::zero(); rows * cols];
            for (j, dxb) in dx_group.chunks_mut(g.image_len()).enumerate() {
                let b = gi * REDUCE_GROUP + j;
                let xb = &x[b * g.image_len()..(b + 1) * g.image_len()];
                let dyb = &dy[b * ylen..(b + 1) * ylen];
                im2col(xb, g, &mut col);
                // dk += dy_b @ col^T
                T::gemm(filters, cols, rows, T::one(), dyb, cols, 1, &col, 1, cols, T::one(), &mut dk, rows, 1);
                // dcol = kernel^T @ dy_b
                T::gemm(rows, filters, cols, T::one(), kernel, 1, rows, dyb, cols, 1, T::zero(), &mut dcol, cols, 1);
                col2im(&dcol, g, dxb);
            }
            dk
        })
        .collect();
    (dx, sum_partials(partials, filters * rows))
}

/// Transposed convolution; `kernel` is `[C_in, C_out, k, k]` and `g` describes
/// the *output* image with the input as its patch grid.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    in_channels: usize,
    g: &ConvGeom,
    batch: usize,
) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut y = vec![T::zero(); batch * g.image_len()];
    y.par_chunks_mut(g.image_len())
        .zip(x.par_chunks(in_channels * cols))
        .for_each_init(
            || vec![T::zero(); rows * cols],
            |col, (yb, xb)| {
                T::gemm(rows, in_channels, cols, T::one(), kernel, 1, rows, xb, cols, 1, T::zero(), col, cols, 1);
                col2im(col, g, yb);
            },
        );
    y
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    in_channels: usize,
    g: &ConvGeom,
    batch: usize,
) -> (Vec<T>, Vec<T>) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let xlen = in_channels * cols;
    let mut dx = vec![T::zero(); batch * xlen];
    let partials: Vec<Vec<T>> = dx
        .par_chunks_mut(REDUCE_GROUP * xlen)
        .enumerate()
        .map(|(gi, dx_group)| {
            let mut dk = vec![T::zero(); in_channels * rows];
            let mut col = vec![T::zero(); rows * cols];
            for (j, dxb) in dx_group.chunks_mut(xlen).enumerate() {
                let b = gi * REDUCE_GROUP + j;
                let xb = &x[b * xlen..(b + 1) * xlen];
                im2col(&dy[b * g.image_len()..(b + 1) * g.image_len()], g, &mut col);
                // dx_b = kernel @ col
                T::gemm(in_channels, rows, cols, T::one(), kernel, rows, 1, &col, cols, 1, T::zero(), dxb, cols, 1);
                // dk += x_b @ col^T
                T::gemm(in_channels, cols, rows, T::one(), xb, cols, 1, &col, 1, cols, T::one(), &mut dk, rows, 1);
            }
            dk
        })
        .collect();
    (dx, sum_partials(partials, in_channels * rows))
}

fn sum_partials<T: Scalar>(partials: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}
