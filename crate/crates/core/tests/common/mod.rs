#![allow(dead_code)]

use allukan_core::{SplineSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Knots computed directly as `lo + (i - k)·h`.
pub fn naive_knots(spec: &SplineSpec) -> Vec<f64> {
    let h = (spec.hi - spec.lo) / spec.grid_size as f64;
    (0..spec.grid_size + 2 * spec.order + 1)
        .map(|i| spec.lo + (i as f64 - spec.order as f64) * h)
        .collect()
}

/// Plain recursive Cox–de Boor on the clamped input; the last domain cell is
/// closed on the right.
pub fn naive_basis(x: f64, spec: &SplineSpec) -> Vec<f64> {
    let t = naive_knots(spec);
    let x = x.clamp(spec.lo, spec.hi);
    let last = spec.grid_size + spec.order - 1;
    fn b(i: usize, p: usize, x: f64, t: &[f64], last: usize) -> f64 {
        if p == 0 {
            let inside = if x == t[last + 1] {
                i == last
            } else {
                t[i] <= x && x < t[i + 1]
            };
            return if inside { 1.0 } else { 0.0 };
        }
        let left = (x - t[i]) / (t[i + p] - t[i]) * b(i, p - 1, x, t, last);
        let right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * b(i + 1, p - 1, x, t, last);
        left + right
    }
    (0..spec.grid_size + spec.order)
        .map(|i| b(i, spec.order, x, &t, last))
        .collect()
}

/// Sample in `(lo, hi)` at least `gap` away from every knot.
pub fn away_from_knots(rng: &mut ChaCha8Rng, spec: &SplineSpec, gap: f64) -> f64 {
    let t = naive_knots(spec);
    loop {
        let x = rng.random_range(spec.lo..spec.hi);
        if t.iter().all(|k| (x - k).abs() > gap) {
            return x;
        }
    }
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
