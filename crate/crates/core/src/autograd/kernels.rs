//! Slice-level kernels shared by forward and backward rules.
//!
//! Every reduction accumulates in a fixed index order starting from zero, and
//! parallel kernels only split work across independent output rows, so results
//! are bitwise reproducible regardless of thread count.

use rayon::prelude::*;

use crate::tensor::Element;

/// Work size (multiply-adds) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

fn rows_mut<T: Element>(
    out: &mut [T],
    row_len: usize,
    work: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    if row_len == 0 {
        return;
    }
    if work >= PAR_THRESHOLD {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        out.chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// `a[m,k] · b[k,n]`.
pub fn matmul_nn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    rows_mut(&mut out, n, m * k * n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &ap) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o = *o + ap * bv;
            }
        }
    });
    out
}

/// `a[m,k] · b[n,k]ᵀ`.
pub fn matmul_nt<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    rows_mut(&mut out, n, m * k * n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            *o = acc;
        }
    });
    out
}

/// `a[k,m]ᵀ · b[k,n]`.
pub fn matmul_tn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    rows_mut(&mut out, n, m * k * n, |i, row| {
        for p in 0..k {
            let ap = a[p * m + i];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o = *o + ap * bv;
            }
        }
    });
    out
}

pub fn transpose<T: Element>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Sums `[outer, len, inner]` over the middle axis.
pub fn sum_axis<T: Element>(a: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); outer * inner];
    rows_mut(&mut out, inner, outer * len * inner, |o, row| {
        let base = o * len * inner;
        for j in 0..len {
            let src = &a[base + j * inner..base + (j + 1) * inner];
            for (r, &v) in row.iter_mut().zip(src) {
                *r = *r + v;
            }
        }
    });
    out
}

pub fn sum_all<T: Element>(a: &[T]) -> T {
    let mut acc = T::zero();
    for &v in a {
        acc = acc + v;
    }
    acc
}

pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn silu<T: Element>(x: T) -> T {
    x * sigmoid(x)
}

pub fn silu_grad<T: Element>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Shape bookkeeping for the patch-unfolding (im2col) operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Output spatial extent, or `None` when the kernel does not fit.
    pub fn output_hw(&self) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let ph = self.height + 2 * self.padding;
        let pw = self.width + 2 * self.padding;
        if kh > ph || kw > pw || self.stride == 0 {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }
}

/// `[B,C,H,W]` → `[B·OH·OW, C·kh·kw]`, rows ordered `(b, oy, ox)` and columns
/// `(c, ky, kx)`; out-of-bounds taps read zero.
pub fn unfold<T: Element>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = g.output_hw().expect("validated geometry");
    let (kh, kw) = g.kernel;
    let cols = g.patch_len();
    let rows = g.batch * oh * ow;
    let mut out = vec![T::zero(); rows * cols];
    let pad = g.padding as isize;
    rows_mut(&mut out, cols, rows * cols, |r, row| {
        let b = r / (oh * ow);
        let oy = (r / ow) % oh;
        let ox = r % ow;
        let mut col = 0;
        for c in 0..g.channels {
            let plane = &x[(b * g.channels + c) * g.height * g.width..][..g.height * g.width];
            for ky in 0..kh {
                let iy = (oy * g.stride + ky) as isize - pad;
                for kx in 0..kw {
                    let ix = (ox * g.stride + kx) as isize - pad;
                    if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                        row[col] = plane[iy as usize * g.width + ix as usize];
                    }
                    col += 1;
                }
            }
        }
    });
    out
}

/// Adjoint of [`unfold`]: scatters patch gradients back onto the image.
pub fn fold<T: Element>(cols_grad: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = g.output_hw().expect("validated geometry");
    let (kh, kw) = g.kernel;
    let cols = g.patch_len();
    let image = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); g.batch * image];
    let pad = g.padding as isize;
    rows_mut(&mut out, image, g.batch * oh * ow * cols, |b, img| {
        for oy in 0..oh {
            for ox in 0..ow {
                let r = (b * oh + oy) * ow + ox;
                let row = &cols_grad[r * cols..(r + 1) * cols];
                let mut col = 0;
                for c in 0..g.channels {
                    for ky in 0..kh {
                        let iy = (oy * g.stride + ky) as isize - pad;
                        for kx in 0..kw {
                            let ix = (ox * g.stride + kx) as isize - pad;
                            if iy >= 0
                                && ix >= 0
                                && (iy as usize) < g.height
                                && (ix as usize) < g.width
                            {
                                let idx =
                                    c * g.height * g.width + iy as usize * g.width + ix as usize;
                                img[idx] = img[idx] + row[col];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    });
    out
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Element>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(x[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

pub fn upsample2x<T: Element>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); planes * 4 * h * w];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Element>(g: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                let d = &mut dst[(y / 2) * w + xx / 2];
                *d = *d + src[y * 2 * w + xx];
            }
        }
    }
    out
}

/// Normalizes consecutive groups of `group` elements to zero mean and unit
/// variance. Returns the output and the per-group inverse standard deviation.
pub fn normalize_groups<T: Element>(x: &[T], group: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = T::from_usize(group).expect("group size");
    let groups = x.len() / group;
    let mut out = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); groups];
    let work = x.len();
    let body = |(src, (dst, inv_std)): (&[T], (&mut [T], &mut T))| {
        let mean = sum_all(src) / n;
        let mut var = T::zero();
        for &v in src {
            let d = v - mean;
            var = var + d * d;
        }
        let is = T::one() / (var / n + eps).sqrt();
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
        *inv_std = is;
    };
    if work >= PAR_THRESHOLD {
        x.par_chunks(group)
            .zip(out.par_chunks_mut(group).zip(inv.par_iter_mut()))
            .for_each(body);
    } else {
        x.chunks(group)
            .zip(out.chunks_mut(group).zip(inv.iter_mut()))
            .for_each(body);
    }
    (out, inv)
}

pub fn normalize_groups_backward<T: Element>(g: &[T], y: &[T], inv: &[T], group: usize) -> Vec<T> {
    let n = T::from_usize(group).expect("group size");
    let mut out = vec![T::zero(); g.len()];
    for (gi, &is) in inv.iter().enumerate() {
        let gs = &g[gi * group..(gi + 1) * group];
        let ys = &y[gi * group..(gi + 1) * group];
        let mean_g = sum_all(gs) / n;
        let mut gy = T::zero();
        for (&a, &b) in gs.iter().zip(ys) {
            gy = gy + a * b;
        }
        let mean_gy = gy / n;
        for ((o, &a), &b) in out[gi * group..(gi + 1) * group].iter_mut().zip(gs).zip(ys) {
            *o = is * (a - mean_g - b * mean_gy);
        }
    }
    out
}
