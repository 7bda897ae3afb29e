//! Differentiable operations and their backward rules.
//!
//! Broadcasting is limited to two cases: the right operand is a scalar
//! (one element) or its shape is a trailing suffix of the left operand's
//! shape. The result always has the left operand's shape.

use std::sync::Arc;

use super::graph::{BackwardCtx, NodeId, Saved, Var};
use super::kernels::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::spline::KnotTable;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

pub(crate) enum Op<T: Element> {
    Binary {
        kind: Binary,
        a: NodeId,
        b: NodeId,
        /// Element count of `b`; element `i` of `a` pairs with `b[i % b_len]`.
        b_len: usize,
    },
    Scale {
        a: NodeId,
        factor: T,
    },
    AddScalar {
        a: NodeId,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
        transpose_b: bool,
    },
    Transpose {
        a: NodeId,
        rows: usize,
        cols: usize,
    },
    Reshape {
        a: NodeId,
    },
    Permute {
        a: NodeId,
        perm: Vec<usize>,
    },
    SumAxis {
        a: NodeId,
        outer: usize,
        len: usize,
        inner: usize,
    },
    SumAll {
        a: NodeId,
    },
    Silu {
        a: NodeId,
    },
    Sigmoid {
        a: NodeId,
    },
    Clamp {
        a: NodeId,
        lo: T,
        hi: T,
    },
    SplineLevel {
        x: NodeId,
        prev: NodeId,
        order: usize,
        knots: Arc<KnotTable<T>>,
    },
    Unfold {
        a: NodeId,
        geom: ConvGeometry,
    },
    Upsample2x {
        a: NodeId,
        planes: usize,
        h: usize,
        w: usize,
    },
    Concat {
        parts: Vec<NodeId>,
        outer: usize,
        /// Per-part contiguous block length (axis extent times inner size).
        blocks: Vec<usize>,
    },
    Normalize {
        a: NodeId,
        group: usize,
        inv_std: Vec<T>,
    },
    BceLogits {
        z: NodeId,
        t: NodeId,
    },
}

fn accumulate<T: Element>(
    ctx: &BackwardCtx<'_, T>,
    grads: &mut [Option<Tensor<T>>],
    id: NodeId,
    g: Tensor<T>,
) {
    if !ctx.requires_grad(id) {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn like<T: Element>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), data).expect("gradient shape")
}

impl<T: Element> Op<T> {
    pub(crate) fn backward(
        &self,
        ctx: &BackwardCtx<'_, T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let gd = g.data();
        match self {
            Op::Binary { kind, a, b, b_len } => {
                let (a, b, b_len) = (*a, *b, *b_len);
                let a_shape = ctx.shape(a).to_vec();
                let b_shape = ctx.shape(b).to_vec();
                if ctx.requires_grad(a) {
                    let da: Vec<T> = match kind {
                        Binary::Add | Binary::Sub => gd.to_vec(),
                        Binary::Mul => {
                            let bv = ctx.saved(b).data();
                            gd.iter()
                                .enumerate()
                                .map(|(i, &gi)| gi * bv[i % b_len])
                                .collect()
                        }
                        Binary::Div => {
                            let bv = ctx.saved(b).data();
                            gd.iter()
                                .enumerate()
                                .map(|(i, &gi)| gi / bv[i % b_len])
                                .collect()
                        }
                    };
                    accumulate(ctx, grads, a, like(&a_shape, da));
                }
                if ctx.requires_grad(b) {
                    let mut db = vec![T::zero(); b_len];
                    match kind {
                        Binary::Add => {
                            for (i, &gi) in gd.iter().enumerate() {
                                db[i % b_len] = db[i % b_len] + gi;
                            }
                        }
                        Binary::Sub => {
                            for (i, &gi) in gd.iter().enumerate() {
                                db[i % b_len] = db[i % b_len] - gi;
                            }
                        }
                        Binary::Mul => {
                            let av = ctx.saved(a).data();
                            for (i, &gi) in gd.iter().enumerate() {
                                db[i % b_len] = db[i % b_len] + gi * av[i];
                            }
                        }
                        Binary::Div => {
                            let av = ctx.saved(a).data();
                            let bv = ctx.saved(b).data();
                            for (i, &gi) in gd.iter().enumerate() {
                                let bj = bv[i % b_len];
                                db[i % b_len] = db[i % b_len] - gi * av[i] / (bj * bj);
                            }
                        }
                    }
                    accumulate(ctx, grads, b, like(&b_shape, db));
                }
            }
            Op::Scale { a, factor } => {
                let da = gd.iter().map(|&v| v * *factor).collect();
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::AddScalar { a } | Op::Reshape { a } => {
                let da = gd.to_vec();
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                transpose_b,
            } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                if ctx.requires_grad(a) {
                    let bv = ctx.saved(b).data();
                    let da = if *transpose_b {
                        kernels::matmul_nn(gd, bv, m, n, k)
                    } else {
                        kernels::matmul_nt(gd, bv, m, n, k)
                    };
                    accumulate(ctx, grads, a, like(ctx.shape(a), da));
                }
                if ctx.requires_grad(b) {
                    let av = ctx.saved(a).data();
                    let db = if *transpose_b {
                        kernels::matmul_tn(gd, av, n, m, k)
                    } else {
                        kernels::matmul_tn(av, gd, k, m, n)
                    };
                    accumulate(ctx, grads, b, like(ctx.shape(b), db));
                }
            }
            Op::Transpose { a, rows, cols } => {
                let da = kernels::transpose(gd, *cols, *rows);
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::Permute { a, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let da = kernels::permute(gd, g.shape(), &inv);
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::SumAxis {
                a,
                outer,
                len,
                inner,
            } => {
                let mut da = Vec::with_capacity(outer * len * inner);
                for o in 0..*outer {
                    let row = &gd[o * inner..(o + 1) * inner];
                    for _ in 0..*len {
                        da.extend_from_slice(row);
                    }
                }
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::SumAll { a } => {
                let shape = ctx.shape(*a).to_vec();
                accumulate(ctx, grads, *a, Tensor::full(shape, gd[0]));
            }
            Op::Silu { a } => {
                let av = ctx.saved(*a).data();
                let da = gd
                    .iter()
                    .zip(av)
                    .map(|(&gi, &x)| gi * kernels::silu_grad(x))
                    .collect();
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::Sigmoid { a } => {
                let s = ctx.output().data();
                let da = gd
                    .iter()
                    .zip(s)
                    .map(|(&gi, &si)| gi * si * (T::one() - si))
                    .collect();
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::Clamp { a, lo, hi } => {
                let av = ctx.saved(*a).data();
                let da = gd
                    .iter()
                    .zip(av)
                    .map(|(&gi, &x)| if x >= *lo && x <= *hi { gi } else { T::zero() })
                    .collect();
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::SplineLevel {
                x,
                prev,
                order,
                knots,
            } => {
                let (x, prev) = (*x, *prev);
                let out_len = g.shape().last().copied().unwrap_or(1);
                let in_len = out_len + 1;
                let need_x = ctx.requires_grad(x);
                let need_prev = ctx.requires_grad(prev);
                let elems = gd.len() / out_len.max(1);
                let mut dx = vec![T::zero(); if need_x { elems } else { 0 }];
                let mut dprev = vec![T::zero(); if need_prev { elems * in_len } else { 0 }];
                let xv = if need_prev {
                    Some(ctx.saved(x).data())
                } else {
                    None
                };
                let pv = if need_x {
                    Some(ctx.saved(prev).data())
                } else {
                    None
                };
                for e in 0..elems {
                    let ge = &gd[e * out_len..(e + 1) * out_len];
                    if let Some(pv) = pv {
                        dx[e] =
                            knots.level_input_grad(*order, &pv[e * in_len..(e + 1) * in_len], ge);
                    }
                    if let Some(xv) = xv {
                        knots.level_prev_grad(
                            *order,
                            xv[e],
                            ge,
                            &mut dprev[e * in_len..(e + 1) * in_len],
                        );
                    }
                }
                if need_x {
                    accumulate(ctx, grads, x, like(ctx.shape(x), dx));
                }
                if need_prev {
                    accumulate(ctx, grads, prev, like(ctx.shape(prev), dprev));
                }
            }
            Op::Unfold { a, geom } => {
                let da = kernels::fold(gd, geom);
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::Upsample2x { a, planes, h, w } => {
                let da = kernels::upsample2x_backward(gd, *planes, *h, *w);
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::Concat {
                parts,
                outer,
                blocks,
            } => {
                let total: usize = blocks.iter().sum();
                let mut offset = 0;
                for (&p, &blk) in parts.iter().zip(blocks) {
                    if ctx.requires_grad(p) {
                        let mut dp = Vec::with_capacity(outer * blk);
                        for o in 0..*outer {
                            dp.extend_from_slice(&gd[o * total + offset..o * total + offset + blk]);
                        }
                        accumulate(ctx, grads, p, like(ctx.shape(p), dp));
                    }
                    offset += blk;
                }
            }
            Op::Normalize { a, group, inv_std } => {
                let y = ctx.output().data();
                let da = kernels::normalize_groups_backward(gd, y, inv_std, *group);
                accumulate(ctx, grads, *a, like(ctx.shape(*a), da));
            }
            Op::BceLogits { z, t } => {
                let zv = ctx.saved(*z).data();
                let tv = ctx.saved(*t).data();
                let dz = gd
                    .iter()
                    .zip(zv.iter().zip(tv))
                    .map(|(&gi, (&zi, &ti))| gi * (kernels::sigmoid(zi) - ti))
                    .collect();
                accumulate(ctx, grads, *z, like(ctx.shape(*z), dz));
            }
        }
        Ok(())
    }
}

fn broadcast_len(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize> {
    let b_len: usize = b.iter().product();
    if a == b || b_len == 1 {
        return Ok(b_len);
    }
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        return Ok(b_len);
    }
    Err(Error::shape(op, a, b))
}

// Fallible arithmetic returns Result, so the std operator traits do not fit.
#[allow(clippy::should_implement_trait)]
impl<'g, T: Element> Var<'g, T> {
    fn unary(self, value: Tensor<T>, op: Op<T>, saved: Vec<Saved>) -> Var<'g, T> {
        let rg = self.requires_grad();
        self.graph.push(value, Some(op), rg, saved)
    }

    fn binary(self, other: Var<'g, T>, kind: Binary, name: &'static str) -> Result<Var<'g, T>> {
        let a = self.value();
        let b = other.value();
        let b_len = broadcast_len(name, a.shape(), b.shape())?;
        let bv = b.data();
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % b_len]))
            .collect();
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        let mut saved = Vec::new();
        match kind {
            Binary::Add | Binary::Sub => {}
            Binary::Mul => {
                if ra {
                    saved.push(Saved::Node(other.id));
                }
                if rb {
                    saved.push(Saved::Node(self.id));
                }
            }
            Binary::Div => {
                saved.push(Saved::Node(other.id));
                if rb {
                    saved.push(Saved::Node(self.id));
                }
            }
        }
        let value = like(a.shape(), data);
        let op = Op::Binary {
            kind,
            a: self.id,
            b: other.id,
            b_len,
        };
        Ok(self.graph.push(value, Some(op), ra || rb, saved))
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Add, "add")
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Sub, "sub")
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Mul, "mul")
    }

    pub fn div(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Div, "div")
    }

    pub fn scale(self, factor: T) -> Var<'g, T> {
        let value = self.value().map(|v| v * factor);
        self.unary(value, Op::Scale { a: self.id, factor }, Vec::new())
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        let value = self.value().map(|v| v + c);
        self.unary(value, Op::AddScalar { a: self.id }, Vec::new())
    }

    fn matmul_impl(self, other: Var<'g, T>, transpose_b: bool) -> Result<Var<'g, T>> {
        let a = self.value();
        let b = other.value();
        let name = if transpose_b { "matmul_t" } else { "matmul" };
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::shape(name, a.shape(), b.shape()));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (kb, n) = if transpose_b {
            (b.shape()[1], b.shape()[0])
        } else {
            (b.shape()[0], b.shape()[1])
        };
        if k != kb {
            return Err(Error::shape(name, a.shape(), b.shape()));
        }
        let data = if transpose_b {
            kernels::matmul_nt(a.data(), b.data(), m, k, n)
        } else {
            kernels::matmul_nn(a.data(), b.data(), m, k, n)
        };
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        let mut saved = Vec::new();
        if ra {
            saved.push(Saved::Node(other.id));
        }
        if rb {
            saved.push(Saved::Node(self.id));
        }
        let op = Op::MatMul {
            a: self.id,
            b: other.id,
            m,
            k,
            n,
            transpose_b,
        };
        Ok(self
            .graph
            .push(like(&[m, n], data), Some(op), ra || rb, saved))
    }

    /// `self[m,k] · other[k,n]`.
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.matmul_impl(other, false)
    }

    /// `self[m,k] · other[n,k]ᵀ`.
    pub fn matmul_t(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.matmul_impl(other, true)
    }

    pub fn transpose(self) -> Result<Var<'g, T>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(Error::Contract(format!(
                "transpose of rank-{} tensor",
                a.rank()
            )));
        }
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let value = like(&[cols, rows], kernels::transpose(a.data(), rows, cols));
        Ok(self.unary(
            value,
            Op::Transpose {
                a: self.id,
                rows,
                cols,
            },
            Vec::new(),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let value = (*self.value()).clone().reshape(shape.to_vec())?;
        Ok(self.unary(value, Op::Reshape { a: self.id }, Vec::new()))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'g, T>> {
        let a = self.value();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..a.rank()).collect::<Vec<_>>() {
            return Err(Error::Contract(format!(
                "invalid permutation {perm:?} for shape {:?}",
                a.shape()
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
        let value = like(&out_shape, kernels::permute(a.data(), a.shape(), perm));
        Ok(self.unary(
            value,
            Op::Permute {
                a: self.id,
                perm: perm.to_vec(),
            },
            Vec::new(),
        ))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(Error::Contract(format!(
                "sum over axis {axis} of shape {:?}",
                a.shape()
            )));
        }
        let outer: usize = a.shape()[..axis].iter().product();
        let len = a.shape()[axis];
        let inner: usize = a.shape()[axis + 1..].iter().product();
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        let value = like(&shape, kernels::sum_axis(a.data(), outer, len, inner));
        Ok(self.unary(
            value,
            Op::SumAxis {
                a: self.id,
                outer,
                len,
                inner,
            },
            Vec::new(),
        ))
    }

    pub fn sum_all(self) -> Var<'g, T> {
        let value = Tensor::scalar(kernels::sum_all(self.value().data()));
        self.unary(value, Op::SumAll { a: self.id }, Vec::new())
    }

    pub fn mean_all(self) -> Var<'g, T> {
        let n = self.value().numel().max(1);
        self.sum_all()
            .scale(T::one() / T::from_usize(n).expect("count"))
    }

    pub fn silu(self) -> Var<'g, T> {
        let value = self.value().map(kernels::silu);
        self.unary(value, Op::Silu { a: self.id }, vec![Saved::Node(self.id)])
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        let value = self.value().map(kernels::sigmoid);
        self.unary(value, Op::Sigmoid { a: self.id }, vec![Saved::Output])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(self, lo: T, hi: T) -> Var<'g, T> {
        let value = self.value().map(|v| v.max(lo).min(hi));
        self.unary(
            value,
            Op::Clamp { a: self.id, lo, hi },
            vec![Saved::Node(self.id)],
        )
    }

    /// One step of the de Boor–Cox recursion: `prev` holds order `order-1`
    /// basis values along its last axis for each element of `self`.
    pub(crate) fn spline_level(
        self,
        prev: Var<'g, T>,
        order: usize,
        knots: Arc<KnotTable<T>>,
    ) -> Result<Var<'g, T>> {
        let x = self.value();
        let p = prev.value();
        let in_len = *p.shape().last().unwrap_or(&0);
        if in_len < 2 || p.numel() != x.numel() * in_len || p.shape()[..p.rank() - 1] != *x.shape()
        {
            return Err(Error::shape("spline_level", x.shape(), p.shape()));
        }
        let out_len = in_len - 1;
        let mut data = vec![T::zero(); x.numel() * out_len];
        for (e, &xe) in x.data().iter().enumerate() {
            knots.raise_order(
                order,
                xe,
                knots.cell_of(xe),
                &p.data()[e * in_len..(e + 1) * in_len],
                &mut data[e * out_len..(e + 1) * out_len],
            );
        }
        let mut shape = x.shape().to_vec();
        shape.push(out_len);
        let (rx, rp) = (self.requires_grad(), prev.requires_grad());
        let mut saved = Vec::new();
        if rx {
            saved.push(Saved::Node(prev.id));
        }
        if rp {
            saved.push(Saved::Node(self.id));
        }
        let op = Op::SplineLevel {
            x: self.id,
            prev: prev.id,
            order,
            knots,
        };
        Ok(self
            .graph
            .push(like(&shape, data), Some(op), rx || rp, saved))
    }

    /// Patch unfolding of an NCHW tensor into `[B·OH·OW, C·kh·kw]`.
    pub fn unfold(
        self,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g, T>> {
        let a = self.value();
        if a.rank() != 4 {
            return Err(Error::Contract(format!(
                "unfold expects NCHW input, got {:?}",
                a.shape()
            )));
        }
        let s = a.shape();
        let geom = ConvGeometry {
            batch: s[0],
            channels: s[1],
            height: s[2],
            width: s[3],
            kernel,
            stride,
            padding,
        };
        let (oh, ow) = geom
            .output_hw()
            .ok_or_else(|| Error::shape("unfold", s, &[kernel.0, kernel.1]))?;
        let value = like(
            &[geom.batch * oh * ow, geom.patch_len()],
            kernels::unfold(a.data(), &geom),
        );
        Ok(self.unary(value, Op::Unfold { a: self.id, geom }, Vec::new()))
    }

    /// Nearest-neighbour 2× upsampling of an NCHW tensor.
    pub fn upsample2x(self) -> Result<Var<'g, T>> {
        let a = self.value();
        if a.rank() != 4 {
            return Err(Error::Contract(format!(
                "upsample expects NCHW input, got {:?}",
                a.shape()
            )));
        }
        let s = a.shape();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let value = like(
            &[s[0], s[1], 2 * h, 2 * w],
            kernels::upsample2x(a.data(), planes, h, w),
        );
        Ok(self.unary(
            value,
            Op::Upsample2x {
                a: self.id,
                planes,
                h,
                w,
            },
            Vec::new(),
        ))
    }

    /// Normalizes each run of `group` consecutive elements to zero mean and
    /// unit variance (no affine parameters).
    pub fn normalize(self, group: usize, eps: T) -> Result<Var<'g, T>> {
        let a = self.value();
        if group == 0 || !a.numel().is_multiple_of(group) {
            return Err(Error::Contract(format!(
                "normalization group {group} does not divide shape {:?}",
                a.shape()
            )));
        }
        let (out, inv_std) = kernels::normalize_groups(a.data(), group, eps);
        let bytes = inv_std.len() * T::DTYPE.size();
        Ok(self.unary(
            like(a.shape(), out),
            Op::Normalize {
                a: self.id,
                group,
                inv_std,
            },
            vec![Saved::Output, Saved::Bytes(bytes)],
        ))
    }

    /// Elementwise binary cross-entropy of `sigmoid(self)` against `target`,
    /// evaluated in the overflow-free logit form.
    pub fn bce_with_logits(self, target: Var<'g, T>) -> Result<Var<'g, T>> {
        let z = self.value();
        let t = target.value();
        if z.shape() != t.shape() {
            return Err(Error::shape("bce_with_logits", z.shape(), t.shape()));
        }
        let data = z
            .data()
            .iter()
            .zip(t.data())
            .map(|(&zi, &ti)| zi.max(T::zero()) - zi * ti + (T::one() + (-zi.abs()).exp()).ln())
            .collect();
        Ok(self.unary(
            like(z.shape(), data),
            Op::BceLogits {
                z: self.id,
                t: target.id,
            },
            vec![Saved::Node(self.id), Saved::Node(target.id)],
        ))
    }
}

impl<T: Element> super::graph::Graph<T> {
    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?
            .value();
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::Contract(format!(
                "concat axis {axis} of rank {rank}"
            )));
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut axis_total = 0;
        let mut blocks = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            if s.len() != rank
                || s[..axis] != first.shape()[..axis]
                || s[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(Error::shape("concat", first.shape(), s));
            }
            axis_total += s[axis];
            blocks.push(s[axis] * inner);
        }
        let total: usize = blocks.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (v, &blk) in values.iter().zip(&blocks) {
                data.extend_from_slice(&v.data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = axis_total;
        let rg = parts.iter().any(|p| p.requires_grad());
        let op = Op::Concat {
            parts: parts.iter().map(|p| p.id).collect(),
            outer,
            blocks,
        };
        Ok(self.push(like(&shape, data), Some(op), rg, Vec::new()))
    }
}
