//! Uniform-grid B-splines: knot construction, de Boor–Cox basis evaluation,
//! closed-form basis derivatives and the aggregated (input-summed) basis used
//! by shared-activation layers.
//!
//! Inputs are clamped into the spline domain before evaluation and the last
//! domain cell is closed on the right, so every clamped input sees a full
//! partition of unity.

use std::sync::Arc;

use rayon::prelude::*;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Grid size, order and domain of a uniform B-spline basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineSpec {
    pub grid_size: usize,
    pub order: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for SplineSpec {
    fn default() -> Self {
        SplineSpec {
            grid_size: 5,
            order: 3,
            lo: -1.0,
            hi: 1.0,
        }
    }
}

impl SplineSpec {
    pub fn new(grid_size: usize, order: usize, lo: f64, hi: f64) -> Result<Self> {
        let spec = SplineSpec {
            grid_size,
            order,
            lo,
            hi,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(Error::Config("spline grid size must be positive".into()));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Config(format!(
                "spline domain [{}, {}] must be finite and non-empty",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Number of basis functions, `grid_size + order`.
    pub fn n_spline(&self) -> usize {
        self.grid_size + self.order
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.grid_size as f64
    }

    /// `grid_size + 2·order + 1` uniform knots extending the domain by
    /// `order` cells on each side. The domain endpoints are exact knots.
    pub fn knots<T: Element>(&self) -> Vec<T> {
        let h = self.spacing();
        let k = self.order as f64;
        let mut t: Vec<T> = (0..self.grid_size + 2 * self.order + 1)
            .map(|i| T::from_f64_lossy(self.lo + (i as f64 - k) * h))
            .collect();
        t[self.order] = T::from_f64_lossy(self.lo);
        t[self.order + self.grid_size] = T::from_f64_lossy(self.hi);
        t
    }

    fn bounds<T: Element>(&self) -> (T, T) {
        (T::from_f64_lossy(self.lo), T::from_f64_lossy(self.hi))
    }

    /// Index of the rightmost domain cell, which is closed on the right.
    fn last_cell(&self) -> usize {
        self.grid_size + self.order - 1
    }
}

/// Knot vector with the reciprocal knot spans of every recursion level and
/// a cell locator. Shared by the detached evaluator and the taped recursion
/// so both produce identical values.
#[derive(Debug)]
pub(crate) struct KnotTable<T: Element> {
    t: Vec<T>,
    /// `inv[p][i] = 1 / (t[i+p] - t[i])`; row 0 is unused.
    inv: Vec<Vec<T>>,
    last_cell: usize,
    lo: T,
    inv_h: T,
}

impl<T: Element> KnotTable<T> {
    pub(crate) fn new(spec: &SplineSpec) -> Self {
        let t = spec.knots::<T>();
        let inv = (0..=spec.order)
            .map(|p| {
                (0..t.len().saturating_sub(p))
                    .map(|i| {
                        if p == 0 {
                            T::zero()
                        } else {
                            T::one() / (t[i + p] - t[i])
                        }
                    })
                    .collect()
            })
            .collect();
        KnotTable {
            last_cell: spec.last_cell(),
            lo: t[0],
            inv_h: T::from_f64_lossy(1.0 / spec.spacing()),
            t,
            inv,
        }
    }

    /// Cell `i` with `t[i] <= x < t[i+1]`; the last domain cell also takes
    /// `x = hi`. `x` must already be clamped to the domain.
    fn cell(&self, x: T) -> usize {
        let top = self.t[self.last_cell + 1];
        if x == top {
            return self.last_cell;
        }
        let guess = ((x - self.lo) * self.inv_h).to_usize().unwrap_or(0);
        let mut c = guess.min(self.t.len() - 2);
        while c > 0 && x < self.t[c] {
            c -= 1;
        }
        while c + 2 < self.t.len() && x >= self.t[c + 1] {
            c += 1;
        }
        c
    }

    /// Order-0 basis: indicator of the cell containing `x`. Returns the cell.
    pub(crate) fn order_zero(&self, x: T, out: &mut [T]) -> usize {
        out.iter_mut().for_each(|o| *o = T::zero());
        let c = self.cell(x);
        out[c] = T::one();
        c
    }

    /// Raises basis values from order `p-1` (`prev`) to order `p` (`out`,
    /// one element shorter). Only the `p+1` entries that can be nonzero for
    /// an input in `cell` are computed.
    pub(crate) fn raise_order(&self, p: usize, x: T, cell: usize, prev: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        let (t, inv) = (&self.t, &self.inv[p]);
        let first = cell.saturating_sub(p);
        let last = cell.min(out.len() - 1);
        for i in first..=last {
            let left = (x - t[i]) * inv[i] * prev[i];
            let right = (t[i + p + 1] - x) * inv[i + 1] * prev[i + 1];
            out[i] = left + right;
        }
    }

    /// `Σ_i g_i ∂out_i/∂x` for one [`KnotTable::raise_order`] step with
    /// `prev` held fixed.
    pub(crate) fn level_input_grad(&self, p: usize, prev: &[T], g: &[T]) -> T {
        let inv = &self.inv[p];
        g.iter().enumerate().fold(T::zero(), |acc, (i, &gi)| {
            acc + gi * (prev[i] * inv[i] - prev[i + 1] * inv[i + 1])
        })
    }

    /// Adds `Σ_i g_i ∂out_i/∂prev` for one [`KnotTable::raise_order`] step
    /// into `dprev`.
    pub(crate) fn level_prev_grad(&self, p: usize, x: T, g: &[T], dprev: &mut [T]) {
        let (t, inv) = (&self.t, &self.inv[p]);
        for (i, &gi) in g.iter().enumerate() {
            dprev[i] = dprev[i] + gi * ((x - t[i]) * inv[i]);
            dprev[i + 1] = dprev[i + 1] + gi * ((t[i + p + 1] - x) * inv[i + 1]);
        }
    }

    pub(crate) fn cell_of(&self, x: T) -> usize {
        self.cell(x)
    }
}

/// Per-thread evaluator holding the knot vector and two level buffers.
struct BasisEval<T: Element> {
    knots: Arc<KnotTable<T>>,
    lo: T,
    hi: T,
    full: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
}

impl<T: Element> BasisEval<T> {
    fn new(spec: &SplineSpec, knots: Arc<KnotTable<T>>) -> Self {
        let cells = spec.grid_size + 2 * spec.order;
        let (lo, hi) = spec.bounds();
        BasisEval {
            knots,
            lo,
            hi,
            full: vec![T::zero(); cells],
            a: vec![T::zero(); spec.order + 1],
            b: vec![T::zero(); spec.order + 1],
        }
    }

    /// The `upto + 1` possibly nonzero basis values of order `upto` at
    /// clamped `x`, with the index of the first one. Each entry uses the same
    /// expression as [`KnotTable::raise_order`].
    fn window(&mut self, x: T, upto: usize) -> (usize, &[T]) {
        let first = self.raise(x, upto);
        (first, &self.a[..=upto])
    }

    fn raise(&mut self, x: T, upto: usize) -> usize {
        let x = x.max(self.lo).min(self.hi);
        let c = self.knots.cell(x);
        let t = &self.knots.t;
        self.a[0] = T::one();
        for p in 1..=upto {
            let inv = &self.knots.inv[p];
            let (prev, next) = (&self.a, &mut self.b);
            for j in 0..=p {
                let i = c - p + j;
                let pl = if j > 0 { prev[j - 1] } else { T::zero() };
                let pr = if j < p { prev[j] } else { T::zero() };
                let left = (x - t[i]) * inv[i] * pl;
                let right = (t[i + p + 1] - x) * inv[i + 1] * pr;
                next[j] = left + right;
            }
            std::mem::swap(&mut self.a, &mut self.b);
        }
        c - upto
    }

    /// Evaluates the basis of order `upto` at clamped `x`; returns a slice of
    /// length `grid_size + 2·order - upto`.
    fn eval(&mut self, x: T, upto: usize) -> &[T] {
        let len = self.full.len() - upto;
        let first = self.raise(x, upto);
        let full = &mut self.full[..len];
        full.iter_mut().for_each(|v| *v = T::zero());
        full[first..=first + upto].copy_from_slice(&self.a[..=upto]);
        full
    }
}

fn check_finite<T: Element>(x: &Tensor<T>, op: &str) -> Result<()> {
    if !x.all_finite() {
        return Err(Error::Contract(format!(
            "{op}: input contains non-finite values"
        )));
    }
    Ok(())
}

fn out_shape(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.push(last);
    s
}

/// Evaluates `f` for every element of `x`, writing `width` values per element.
fn map_elements<T: Element>(
    x: &[T],
    width: usize,
    spec: &SplineSpec,
    f: impl Fn(&mut BasisEval<T>, T, &mut [T]) + Sync + Send,
) -> Vec<T> {
    let knots = Arc::new(KnotTable::new(spec));
    let mut out = vec![T::zero(); x.len() * width];
    const ROWS: usize = 256;
    out.par_chunks_mut(ROWS * width)
        .zip(x.par_chunks(ROWS))
        .for_each_init(
            || BasisEval::new(spec, Arc::clone(&knots)),
            |ev, (dst, src)| {
                for (o, &xe) in dst.chunks_mut(width).zip(src) {
                    f(ev, xe, o);
                }
            },
        );
    out
}

/// Basis values `B_k(x)` along a new trailing axis of length `n_spline`.
#[derive(Debug, Clone)]
pub struct BasisMatrix<T: Element> {
    pub values: Tensor<T>,
    pub spec: SplineSpec,
    /// Always true for matrices produced outside the tape.
    pub detached: bool,
}

/// de Boor–Cox evaluation of every basis function at every element of `x`.
pub fn eval_basis<T: Element>(x: &Tensor<T>, spec: &SplineSpec) -> Result<BasisMatrix<T>> {
    spec.validate()?;
    check_finite(x, "eval_basis")?;
    let n = spec.n_spline();
    let data = map_elements(x.data(), n, spec, |ev, xe, o| {
        o.copy_from_slice(ev.eval(xe, spec.order));
    });
    Ok(BasisMatrix {
        values: Tensor::new(out_shape(x.shape(), n), data)?,
        spec: *spec,
        detached: true,
    })
}

/// Closed-form derivative `B'_k(x)` from the order `k-1` basis; zero where
/// `x` lies outside the domain.
pub fn eval_basis_derivative<T: Element>(x: &Tensor<T>, spec: &SplineSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    if spec.order == 0 {
        return Err(Error::UnsupportedOrder(0));
    }
    check_finite(x, "eval_basis_derivative")?;
    let n = spec.n_spline();
    let k = spec.order;
    let (lo, hi) = spec.bounds::<T>();
    let order_t = T::from_usize(k).expect("order");
    let knots = spec.knots::<T>();
    let data = map_elements(x.data(), n, spec, |ev, xe, o| {
        if xe < lo || xe > hi {
            o.iter_mut().for_each(|v| *v = T::zero());
            return;
        }
        let prev = ev.eval(xe, k - 1);
        for (i, v) in o.iter_mut().enumerate() {
            let d1 = knots[i + k] - knots[i];
            let d2 = knots[i + k + 1] - knots[i + 1];
            *v = order_t * (prev[i] / d1 - prev[i + 1] / d2);
        }
    });
    Tensor::new(out_shape(x.shape(), n), data)
}

/// Records the basis evaluation on the tape as a chain of recursion levels,
/// so backward flows through the de Boor–Cox recursion into `x`.
pub fn basis_on_tape<'g, T: Element>(x: Var<'g, T>, spec: &SplineSpec) -> Result<Var<'g, T>> {
    spec.validate()?;
    let xv = x.value();
    check_finite(&xv, "basis_on_tape")?;
    let (lo, hi) = spec.bounds::<T>();
    let knots = Arc::new(KnotTable::new(spec));
    let cells = spec.grid_size + 2 * spec.order;
    let xc = x.clamp(lo, hi);
    let xcv = xc.value();
    let mut level0 = vec![T::zero(); xcv.numel() * cells];
    for (o, &xe) in level0.chunks_mut(cells).zip(xcv.data()) {
        knots.order_zero(xe, o);
    }
    let mut basis = x
        .graph()
        .constant(Tensor::new(out_shape(xcv.shape(), cells), level0)?);
    for p in 1..=spec.order {
        basis = xc.spline_level(basis, p, Arc::clone(&knots))?;
    }
    Ok(basis)
}

/// Input-summed basis `S[b,k] = Σ_j B_k(x[b,j])` plus the largest transient
/// basis buffer allocated while computing it.
#[derive(Debug, Clone)]
pub struct Aggregated<T: Element> {
    pub values: Tensor<T>,
    pub peak_transient_bytes: usize,
}

/// Chunked, detached aggregated basis for `x: [batch, n_in]`. Slices of at
/// most `chunk` inputs are evaluated into a transient buffer, accumulated and
/// released; accumulation runs in input order so the result does not depend
/// on `chunk`.
pub fn aggregate_detached<T: Element>(
    x: &Tensor<T>,
    spec: &SplineSpec,
    chunk: usize,
) -> Result<Aggregated<T>> {
    spec.validate()?;
    if chunk == 0 {
        return Err(Error::Contract(
            "aggregated_basis: chunk must be at least 1".into(),
        ));
    }
    if x.rank() != 2 {
        return Err(Error::Contract(format!(
            "aggregated_basis expects [batch, n_in], got {:?}",
            x.shape()
        )));
    }
    check_finite(x, "aggregated_basis")?;
    let (batch, n_in) = (x.shape()[0], x.shape()[1]);
    let n = spec.n_spline();
    let knots = Arc::new(KnotTable::new(spec));
    let mut sums = vec![T::zero(); batch * n];
    let mut peak = 0;
    let mut start = 0;
    while start < n_in {
        let width = chunk.min(n_in - start);
        let mut buf = vec![T::zero(); batch * width * n];
        peak = peak.max(buf.len() * T::DTYPE.size());
        buf.par_chunks_mut(width * n)
            .zip(sums.par_chunks_mut(n))
            .enumerate()
            .for_each_init(
                || BasisEval::new(spec, Arc::clone(&knots)),
                |ev, (b, (slab, acc))| {
                    let row = &x.data()[b * n_in + start..b * n_in + start + width];
                    for (dst, &xe) in slab.chunks_mut(n).zip(row) {
                        let (first, w) = ev.window(xe, spec.order);
                        dst[first..first + w.len()].copy_from_slice(w);
                    }
                    for dst in slab.chunks(n) {
                        for (a, &v) in acc.iter_mut().zip(dst) {
                            *a = *a + v;
                        }
                    }
                },
            );
        drop(buf);
        start += width;
    }
    Ok(Aggregated {
        values: Tensor::new([batch, n], sums)?,
        peak_transient_bytes: peak,
    })
}

/// Aggregated basis as a graph node. With `grad_free` the result is a
/// detached constant computed chunk by chunk, so nothing is saved for
/// backward; otherwise the full `[batch, n_in, n_spline]` basis is taped and
/// summed over inputs.
pub fn aggregated_basis<'g, T: Element>(
    x: Var<'g, T>,
    spec: &SplineSpec,
    chunk: usize,
    grad_free: bool,
) -> Result<Var<'g, T>> {
    if chunk == 0 {
        return Err(Error::Contract(
            "aggregated_basis: chunk must be at least 1".into(),
        ));
    }
    let g: &Graph<T> = x.graph();
    if grad_free {
        let agg = aggregate_detached(&x.value(), spec, chunk)?;
        g.note_transient(agg.peak_transient_bytes);
        Ok(g.constant(agg.values))
    } else {
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "aggregated_basis expects [batch, n_in], got {shape:?}"
            )));
        }
        let basis = basis_on_tape(x, spec)?;
        g.note_transient(basis.value().nbytes());
        basis.sum_axis(1)
    }
}
