//! Gradient-mode verification: weight gradients under grad-free splines,
//! the spline/residual split of input gradients, and their magnitudes.

use allukan_core::layers::{backward_contract, KanLayer, Layer, SakanLayer};
use allukan_core::{Result, SplineSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::report::{Check, VerificationReport};

pub const DECOMPOSITION_TOL: f64 = 1e-6;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let z: f64 = StandardNormal.sample(&mut *rng);
        scale * z
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn mismatches(a: &Tensor<f64>, b: &Tensor<f64>) -> usize {
    a.data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| x.to_bits() != y.to_bits())
        .count()
}

/// A randomly sized layer in both gradient modes with its test input and
/// upstream gradient.
pub struct LayerCase<L> {
    pub full: L,
    pub free: L,
    pub x: Tensor<f64>,
    pub upstream: Tensor<f64>,
}

fn random_spec(rng: &mut ChaCha8Rng) -> SplineSpec {
    let grid = [3, 5, 8][rng.random_range(0..3)];
    let order = rng.random_range(1..=3);
    SplineSpec::new(grid, order, -1.0, 1.0).expect("valid spline spec")
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.random_range(1..=6),
        rng.random_range(2..=12),
        rng.random_range(1..=8),
    )
}

/// Random SaKAN layer with unit-scale coefficients; every other case uses
/// per-input scales.
pub fn sakan_case(
    rng: &mut ChaCha8Rng,
    index: usize,
    zero_v: bool,
) -> Result<LayerCase<SakanLayer<f64>>> {
    let spec = random_spec(rng);
    let (batch, n_in, n_out) = dims(rng);
    let v = if zero_v {
        Tensor::zeros([n_out, spec.n_spline()])
    } else {
        normal(rng, &[n_out, spec.n_spline()], 1.0)
    };
    let u = normal(rng, &[n_out, n_in], 1.0);
    let lambda = (index % 2 == 1).then(|| uniform(rng, &[n_in], 0.5, 1.5));
    let chunk = rng.random_range(1..=n_in);
    let make = |grad_free| {
        SakanLayer::from_parts(v.clone(), u.clone(), lambda.clone(), spec, grad_free, chunk)
    };
    Ok(LayerCase {
        full: make(false)?,
        free: make(true)?,
        x: uniform(rng, &[batch, n_in], -1.2, 1.2),
        upstream: normal(rng, &[batch, n_out], 1.0),
    })
}

pub fn kan_case(rng: &mut ChaCha8Rng, zero_v: bool) -> Result<LayerCase<KanLayer<f64>>> {
    let spec = random_spec(rng);
    let (batch, n_in, n_out) = dims(rng);
    let vshape = [n_out, n_in, spec.n_spline()];
    let v = if zero_v {
        Tensor::zeros(vshape)
    } else {
        normal(rng, &vshape, 1.0)
    };
    let u = normal(rng, &[n_out, n_in], 1.0);
    let make = |grad_free| KanLayer::from_parts(v.clone(), u.clone(), spec, grad_free);
    Ok(LayerCase {
        full: make(false)?,
        free: make(true)?,
        x: uniform(rng, &[batch, n_in], -1.2, 1.2),
        upstream: normal(rng, &[batch, n_out], 1.0),
    })
}

/// Aggregates over many layers of one family.
#[derive(Debug, Default, Clone, Copy)]
pub struct ModeComparison {
    pub layers: usize,
    /// Weight-gradient elements whose bits differ between modes.
    pub weight_mismatches: usize,
    /// Largest λ-gradient difference between modes. λ scales the spline
    /// input, so its gradient includes the detached spline path.
    pub lambda_grad_diff: f64,
    /// Largest `|grad_full(x) - grad_free(x) - G_S|`.
    pub decomposition_error: f64,
    /// Largest `|grad_free(x) - G_L|`.
    pub residual_error: f64,
}

fn is_weight(name: &str) -> bool {
    name == "v" || name == "u"
}

fn compare<L: Layer<f64>>(
    case: &LayerCase<L>,
    split: impl Fn(&L, &Tensor<f64>, &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)>,
    acc: &mut ModeComparison,
) -> Result<()> {
    let full = backward_contract(&case.full, &case.x, &case.upstream)?;
    let free = backward_contract(&case.free, &case.x, &case.upstream)?;
    for ((name, a), (_, b)) in full.params.iter().zip(&free.params) {
        if is_weight(name) {
            acc.weight_mismatches += mismatches(a, b);
        } else {
            acc.lambda_grad_diff = acc.lambda_grad_diff.max(max_diff(a.data(), b.data()));
        }
    }
    let (gs, gl) = split(&case.full, &case.x, &case.upstream)?;
    let (gf, gr) = (
        full.input.expect("input grad"),
        free.input.expect("input grad"),
    );
    let delta: Vec<f64> = gf
        .data()
        .iter()
        .zip(gr.data())
        .map(|(a, b)| a - b)
        .collect();
    acc.decomposition_error = acc.decomposition_error.max(max_diff(&delta, gs.data()));
    acc.residual_error = acc.residual_error.max(max_diff(gr.data(), gl.data()));
    acc.layers += 1;
    Ok(())
}

pub fn compare_sakan(layers: usize, seed: u64) -> Result<ModeComparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = ModeComparison::default();
    for i in 0..layers {
        compare(
            &sakan_case(&mut rng, i, false)?,
            |l, x, g| l.input_grad_split(x, g),
            &mut acc,
        )?;
    }
    Ok(acc)
}

pub fn compare_kan(layers: usize, seed: u64) -> Result<ModeComparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = ModeComparison::default();
    for _ in 0..layers {
        compare(
            &kan_case(&mut rng, false)?,
            |l, x, g| l.input_grad_split(x, g),
            &mut acc,
        )?;
    }
    Ok(acc)
}

/// Two stacked SaKAN layers run fully in one mode or the other. The first
/// layer's weight-gradient difference between modes must equal its weight
/// gradient under the second layer's `G_S` alone. Returns the largest
/// deviation and the largest difference itself.
pub fn two_layer_stack(trials: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for i in 0..trials {
        let first = sakan_case(&mut rng, i, false)?;
        let n_mid = first.upstream.shape()[1];
        let spec = random_spec(&mut rng);
        let n_out = rng.random_range(1..=6);
        let v2 = normal(&mut rng, &[n_out, spec.n_spline()], 1.0);
        let u2 = normal(&mut rng, &[n_out, n_mid], 1.0);
        let second = |grad_free| {
            SakanLayer::from_parts(v2.clone(), u2.clone(), None, spec, grad_free, n_mid)
        };
        let (second_full, second_free) = (second(false)?, second(true)?);
        let batch = first.x.shape()[0];
        let up = normal(&mut rng, &[batch, n_out], 1.0);

        let h = backward_contract(&first.full, &first.x, &first.upstream)?.output;
        let run = |l1: &SakanLayer<f64>, l2: &SakanLayer<f64>| -> Result<Vec<Tensor<f64>>> {
            let g2 = backward_contract(l2, &h, &up)?;
            let into_mid = g2.input.expect("input grad");
            let g1 = backward_contract(l1, &first.x, &into_mid)?;
            Ok(g1
                .params
                .into_iter()
                .filter(|(n, _)| is_weight(n))
                .map(|(_, t)| t)
                .collect())
        };
        let full = run(&first.full, &second_full)?;
        let free = run(&first.free, &second_free)?;
        let (gs, _) = second_full.input_grad_split(&h, &up)?;
        let via_gs = backward_contract(&first.free, &first.x, &gs)?;
        let via_gs = via_gs.params.iter().filter(|(n, _)| is_weight(n));
        for ((a, b), (_, c)) in full.iter().zip(&free).zip(via_gs) {
            let delta: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            worst = worst.max(max_diff(&delta, c.data()));
            scale = scale.max(max_abs(&delta));
        }
    }
    Ok((worst, scale))
}

/// With zero spline coefficients: the largest `|G_S|` and the number of
/// input-gradient elements that differ between modes.
pub fn zero_coefficients(trials: usize, seed: u64) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut gs_max, mut differing) = (0.0f64, 0usize);
    for i in 0..trials {
        let s = sakan_case(&mut rng, i, true)?;
        let k = kan_case(&mut rng, true)?;
        gs_max = gs_max.max(max_abs(
            s.full.input_grad_split(&s.x, &s.upstream)?.0.data(),
        ));
        gs_max = gs_max.max(max_abs(
            k.full.input_grad_split(&k.x, &k.upstream)?.0.data(),
        ));
        for (a, b) in [
            (
                backward_contract(&s.full, &s.x, &s.upstream)?,
                backward_contract(&s.free, &s.x, &s.upstream)?,
            ),
            (
                backward_contract(&k.full, &k.x, &k.upstream)?,
                backward_contract(&k.free, &k.x, &k.upstream)?,
            ),
        ] {
            differing += mismatches(&a.input.expect("input grad"), &b.input.expect("input grad"));
            differing += mismatches(&a.output, &b.output);
        }
    }
    Ok((gs_max, differing))
}

pub fn theorem1(seed: u64, layers: usize) -> Result<VerificationReport> {
    let mut r = VerificationReport::default();
    let sakan = compare_sakan(layers, seed)?;
    let kan = compare_kan(layers, seed.wrapping_add(1))?;
    for (family, c) in [("sakan", sakan), ("kan", kan)] {
        r.push(Check::new(
            format!("{family}_weight_grads_equal"),
            c.weight_mismatches == 0,
            format!(
                "{} differing elements over {} layers",
                c.weight_mismatches, c.layers
            ),
            "exact",
            "grad(v) and grad(u) do not depend on the spline gradient mode",
        ));
        r.push(Check::new(
            format!("{family}_input_grad_decomposition"),
            c.decomposition_error <= DECOMPOSITION_TOL,
            format!("{:.3e}", c.decomposition_error),
            format!("{DECOMPOSITION_TOL:e}"),
            "grad_full(x) - grad_free(x) equals the analytic spline-path gradient G_S",
        ));
        r.push(Check::new(
            format!("{family}_free_input_grad_is_residual_path"),
            c.residual_error <= DECOMPOSITION_TOL,
            format!("{:.3e}", c.residual_error),
            format!("{DECOMPOSITION_TOL:e}"),
            "grad-free input gradient equals the residual-path gradient G_L",
        ));
    }
    r.push(Check::new(
        "sakan_lambda_grad_diff",
        true,
        format!("{:.3e}", sakan.lambda_grad_diff),
        "logged",
        "λ scales the spline input, so its gradient keeps a spline-path term in full mode",
    ));
    let (dev, scale) = two_layer_stack(layers, seed.wrapping_add(2))?;
    r.push(Check::new(
        "two_layer_preceding_grads",
        dev <= DECOMPOSITION_TOL && scale > 0.0,
        format!("{dev:.3e} (difference scale {scale:.3e})"),
        format!("{DECOMPOSITION_TOL:e}"),
        "preceding-layer weight grads differ between modes only through the next layer's G_S",
    ));
    let (gs, differing) = zero_coefficients(layers.min(20), seed.wrapping_add(3))?;
    r.push(Check::new(
        "zero_v_modes_identical",
        gs == 0.0 && differing == 0,
        format!("max |G_S| {gs:e}, {differing} differing elements"),
        "exact",
        "with zero spline coefficients G_S vanishes and both modes agree end to end",
    ));
    Ok(r)
}

/// Per-layer mean `|G_S|` and `|G_L|` for one random KAN network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradScaleTrial {
    pub gs: Vec<f64>,
    pub gl: Vec<f64>,
    /// Input-gradient elements per layer.
    pub counts: Vec<usize>,
}

impl GradScaleTrial {
    /// Whether every layer has `mean|G_L| > mean|G_S|`.
    pub fn residual_dominates(&self) -> bool {
        self.gs.iter().zip(&self.gl).all(|(s, l)| l > s)
    }

    /// Means of `|G_S|` and `|G_L|` pooled over every layer's input gradient.
    pub fn pooled(&self) -> (f64, f64) {
        let n: usize = self.counts.iter().sum();
        let pool = |m: &[f64]| {
            m.iter()
                .zip(&self.counts)
                .map(|(v, &c)| v * c as f64)
                .sum::<f64>()
                / n as f64
        };
        (pool(&self.gs), pool(&self.gl))
    }

    /// Smallest per-layer `mean|G_L| / mean|G_S|`.
    pub fn min_ratio(&self) -> f64 {
        self.gs
            .iter()
            .zip(&self.gl)
            .map(|(s, l)| l / s)
            .fold(f64::INFINITY, f64::min)
    }
}

/// A vanilla KAN network with widths `dims` at default initialization,
/// evaluated on a batch of uniform inputs in the spline domain. Gradients
/// start from `Σ y` and flow through every layer in full mode.
pub fn gradscale_trial(
    dims: &[usize],
    batch: usize,
    v_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GradScaleTrial> {
    let spec = SplineSpec::default();
    let layers: Vec<KanLayer<f64>> = dims
        .windows(2)
        .map(|w| {
            let l = KanLayer::new(w[0], w[1], spec, false, rng);
            let v = l.v().value().map(|x| x * v_scale);
            KanLayer::from_parts(v, l.u().value().clone(), spec, false)
        })
        .collect::<Result<_>>()?;
    let mut acts = vec![uniform(rng, &[batch, dims[0]], -1.0, 1.0)];
    for l in &layers {
        let next = backward_contract(
            l,
            acts.last().expect("input"),
            &Tensor::zeros([batch, l.n_out()]),
        )?
        .output;
        acts.push(next);
    }
    let mut upstream = Tensor::ones([batch, *dims.last().expect("dims")]);
    let (mut gs, mut gl) = (vec![0.0; layers.len()], vec![0.0; layers.len()]);
    let counts = dims[..layers.len()].iter().map(|d| d * batch).collect();
    for (i, l) in layers.iter().enumerate().rev() {
        let (s, r) = l.input_grad_split(&acts[i], &upstream)?;
        let mean =
            |t: &Tensor<f64>| t.data().iter().map(|v| v.abs()).sum::<f64>() / t.numel() as f64;
        gs[i] = mean(&s);
        gl[i] = mean(&r);
        upstream = backward_contract(l, &acts[i], &upstream)?
            .input
            .expect("input grad");
    }
    Ok(GradScaleTrial { gs, gl, counts })
}

pub struct GradScale {
    pub report: VerificationReport,
    pub trials: Vec<GradScaleTrial>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub const GRADSCALE_BATCH: usize = 32;

pub fn gradscale(dims: &[usize], trials: usize, seed: u64) -> Result<GradScale> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let runs: Vec<GradScaleTrial> = (0..trials)
        .map(|_| gradscale_trial(dims, GRADSCALE_BATCH, 1.0, &mut rng))
        .collect::<Result<_>>()?;
    let dominated = runs
        .iter()
        .filter(|t| {
            let (gs, gl) = t.pooled();
            gl > gs
        })
        .count();
    let fraction = dominated as f64 / trials.max(1) as f64;
    let ratios: Vec<f64> = runs
        .iter()
        .map(|t| {
            let (gs, gl) = t.pooled();
            gl / gs
        })
        .collect();
    let mut report = VerificationReport::default();
    report.push(Check::new(
        "residual_path_dominates",
        trials > 0 && fraction > 0.9,
        format!("{dominated}/{trials} trials ({fraction:.3})"),
        "> 0.9",
        "mean|G_L| exceeds mean|G_S| over the input gradients of random KAN networks",
    ));
    report.push(Check::new(
        "ratio_median",
        true,
        format!("{:.4}", median(ratios)),
        "logged",
        "median over trials of the network-wide mean|G_L| / mean|G_S|",
    ));
    let every = runs.iter().filter(|t| t.residual_dominates()).count();
    report.push(Check::new(
        "every_layer_dominates",
        true,
        format!("{every}/{trials} trials"),
        "logged",
        "trials where mean|G_L| > mean|G_S| holds separately at every layer",
    ));
    for layer in 0..dims.len().saturating_sub(1) {
        let per: Vec<f64> = runs.iter().map(|t| t.gl[layer] / t.gs[layer]).collect();
        let wins = per.iter().filter(|&&r| r > 1.0).count();
        let (lo, hi) = per
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        report.push(Check::new(
            format!("layer{layer}_ratio"),
            true,
            format!(
                "median {:.4} min {lo:.4} max {hi:.4}, above 1 in {wins}/{trials}",
                median(per.clone())
            ),
            "logged",
            format!("distribution of mean|G_L| / mean|G_S| at the input of layer {layer}"),
        ));
    }
    let zero = gradscale_trial(dims, 4, 0.0, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let gs_max = zero.gs.iter().fold(0.0f64, |m, &v| m.max(v));
    report.push(Check::new(
        "zero_v_spline_grad_vanishes",
        gs_max == 0.0,
        format!("{gs_max:e}"),
        "exact",
        "with zero spline coefficients G_S is exactly zero",
    ));
    Ok(GradScale {
        report,
        trials: runs,
    })
}
