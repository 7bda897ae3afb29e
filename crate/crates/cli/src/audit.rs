//! Parameter audit: per-layer counts, formula against enumeration, and the
//! ordering of totals across the ablation presets.

use allukan_core::layers::LayerKind;
use allukan_core::model::{preset, LayerPlan, Network};
use allukan_core::Result;

use crate::report::{Check, VerificationReport};

pub const AUDIT_HEADER: &str = "layer,kind,params";

pub struct Audit {
    pub plan: Vec<LayerPlan>,
    pub total: usize,
    pub report: VerificationReport,
}

impl Audit {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{AUDIT_HEADER}\n");
        for l in &self.plan {
            s.push_str(&format!("{},{},{}\n", l.name, l.kind.as_str(), l.params));
        }
        s.push_str(&format!("total,,{}\n", self.total));
        s
    }
}

fn planned(name: &str) -> Result<usize> {
    preset(name)?.planned_param_count()
}

/// Total-parameter orderings across the ablation rows at one scale.
pub fn ordering_checks(suffix: &str) -> Result<VerificationReport> {
    let p = |n: &str| planned(&format!("{n}{suffix}"));
    let (a, b, c, e) = (
        p("ukan_mlp")?,
        p("ukan")?,
        p("sakan_only")?,
        p("sakan_gradfree")?,
    );
    let (f, g, j) = (p("kaonv_full")?, p("kaonv_gradfree")?, p("all_ukan")?);
    let scale = if suffix.is_empty() { "full" } else { "desk" };
    let mut r = VerificationReport::default();
    let mut push = |name: &str, ok: bool, measured: String, tol: &str, claim: &str| {
        r.push(Check::new(
            format!("{scale}_{name}"),
            ok,
            measured,
            tol,
            claim,
        ));
    };
    push(
        "mlp_below_sakan",
        a < c,
        format!("{a} < {c}"),
        "strict",
        "replacing the token MLP by SaKAN adds few parameters",
    );
    push(
        "sakan_equals_sakan_gradfree",
        c == e,
        format!("{c} = {e}"),
        "exact",
        "grad-free mode does not change the parameter count",
    );
    push(
        "sakan_below_kan",
        e < b,
        format!("{e} < {b}"),
        "strict",
        "shared activations need fewer parameters than vanilla KAN mixers",
    );
    push(
        "kan_far_below_kaonv_kan",
        2 * b < f && f == g,
        format!("{b} << {f} = {g}"),
        "at least 2x",
        "vanilla KAN convolutions dominate the parameter budget",
    );
    let ratio = g as f64 / j as f64;
    push(
        "kaonv_kan_over_all_ukan",
        ratio > 5.0,
        format!("{ratio:.3} ({g} / {j})"),
        "> 5",
        "shared activations shrink KA-convolution models by a large factor",
    );
    push(
        "ukan_mlp_below_ukan",
        a < b,
        format!("{a} < {b}"),
        "strict",
        "the MLP baseline is smaller than the KAN baseline",
    );
    Ok(r)
}

/// Per-layer audit of `name` plus orderings at full and desk scale.
/// `enumerate` additionally builds the network and counts its tensors.
pub fn audit_params(name: &str, enumerate: bool) -> Result<Audit> {
    let cfg = preset(name)?;
    let plan = cfg.layer_plan()?;
    let total: usize = plan.iter().map(|l| l.params).sum();
    let mut report = VerificationReport::default();
    if enumerate {
        let net = Network::<f32>::build(&cfg, 0)?;
        let counted = net.enumerated_param_count();
        let formula = net.param_count();
        let names_match = net.layers().iter().zip(&plan).all(|((n, l), p)| {
            n == &p.name && l.layer().kind() == p.kind && l.layer().param_count() == p.params
        });
        report.push(Check::new(
            "formula_vs_enumeration",
            counted == total && formula == total && names_match && net.layers().len() == plan.len(),
            format!("formula {formula}, planned {total}, enumerated {counted}"),
            "exact",
            "per-layer formulas match the registered tensor sizes",
        ));
    }
    let count = |k: LayerKind| plan.iter().filter(|l| l.kind == k).count();
    report.push(Check::new(
        "layer_kinds",
        true,
        format!(
            "kaonv {} ka {} kan {} fc {} conv {}",
            count(LayerKind::Kaonv),
            count(LayerKind::Ka),
            count(LayerKind::Kan),
            count(LayerKind::Fc),
            count(LayerKind::Conv)
        ),
        "logged",
        format!("layer kinds of {name}"),
    ));
    report.extend(ordering_checks("")?);
    report.extend(ordering_checks("_desk")?);
    Ok(Audit {
        plan,
        total,
        report,
    })
}
