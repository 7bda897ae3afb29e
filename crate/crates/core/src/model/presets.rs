use super::{ConvKind, MlpKind, ModelConfig};
use crate::error::{Error, Result};
use crate::spline::SplineSpec;

struct Row {
    name: &'static str,
    conv: ConvKind,
    mlp: MlpKind,
    grad_free: bool,
    lambda: bool,
}

const fn row(
    name: &'static str,
    conv: ConvKind,
    mlp: MlpKind,
    grad_free: bool,
    lambda: bool,
) -> Row {
    Row {
        name,
        conv,
        mlp,
        grad_free,
        lambda,
    }
}

/// Ablation rows, from the MLP baseline to the full KA network.
const ROWS: [Row; 10] = [
    row(
        "ukan_mlp",
        ConvKind::Plain,
        MlpKind::FullyConnected,
        false,
        false,
    ),
    row("ukan", ConvKind::Plain, MlpKind::Kan, false, false),
    row("sakan_only", ConvKind::Plain, MlpKind::Sakan, false, false),
    row("gradfree_only", ConvKind::Plain, MlpKind::Kan, true, false),
    row(
        "sakan_gradfree",
        ConvKind::Plain,
        MlpKind::Sakan,
        true,
        false,
    ),
    row("kaonv_full", ConvKind::Kaonv, MlpKind::Kan, false, false),
    row("kaonv_gradfree", ConvKind::Kaonv, MlpKind::Kan, true, false),
    row("kaonv_sakan", ConvKind::Kaonv, MlpKind::Sakan, false, false),
    row(
        "all_ukan_lambda",
        ConvKind::Kaonv,
        MlpKind::Sakan,
        true,
        true,
    ),
    row("all_ukan", ConvKind::Kaonv, MlpKind::Sakan, true, false),
];

const DESK_SUFFIX: &str = "_desk";

pub const FULL_CHANNELS: [usize; 5] = [16, 32, 128, 160, 256];
pub const DESK_CHANNELS: [usize; 5] = [8, 12, 16, 20, 24];
pub const FULL_RESOLUTION: usize = 256;
pub const DESK_RESOLUTION: usize = 32;

/// Every preset name: the ten ablation rows followed by their desk-scale
/// variants.
pub fn preset_names() -> Vec<String> {
    ROWS.iter()
        .map(|r| r.name.to_string())
        .chain(ROWS.iter().map(|r| format!("{}{DESK_SUFFIX}", r.name)))
        .collect()
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    let (base, desk) = match name.strip_suffix(DESK_SUFFIX) {
        Some(base) => (base, true),
        None => (name, false),
    };
    let row = ROWS
        .iter()
        .find(|r| r.name == base)
        .ok_or_else(|| Error::UnknownPreset {
            name: name.to_string(),
            available: preset_names().join(", "),
        })?;
    let (channels, res, input) = if desk {
        (DESK_CHANNELS, DESK_RESOLUTION, 1)
    } else {
        (FULL_CHANNELS, FULL_RESOLUTION, 3)
    };
    Ok(ModelConfig {
        input_channels: input,
        num_classes: 1,
        stage_channels: channels.to_vec(),
        conv_kind: row.conv,
        mlp_kind: row.mlp,
        grad_free: row.grad_free,
        chunk: 32,
        use_lambda: row.lambda,
        tokenized_block_depth: 1,
        resolution: (res, res),
        spline: SplineSpec::default(),
    })
}
