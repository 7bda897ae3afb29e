use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{LayerKind, SplineOptions};
use crate::spline::SplineSpec;

/// Layer family used for every convolution, including downsamplers, the
/// depthwise convolutions inside token blocks and the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Plain,
    Kaonv,
}

/// Layer family of the token mixers in the tokenized bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpKind {
    FullyConnected,
    Kan,
    Sakan,
}

impl ConvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConvKind::Plain => "plain_conv",
            ConvKind::Kaonv => "kaonv",
        }
    }
}

impl MlpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MlpKind::FullyConnected => "fully_connected",
            MlpKind::Kan => "kan",
            MlpKind::Sakan => "sakan",
        }
    }
}

impl fmt::Display for ConvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for MlpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain_conv" | "plain" | "conv" => Ok(ConvKind::Plain),
            "kaonv" => Ok(ConvKind::Kaonv),
            other => Err(Error::Config(format!(
                "unknown conv kind `{other}` (expected plain_conv or kaonv)"
            ))),
        }
    }
}

impl FromStr for MlpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fully_connected" | "fc" | "mlp" => Ok(MlpKind::FullyConnected),
            "kan" => Ok(MlpKind::Kan),
            "sakan" | "ka" => Ok(MlpKind::Sakan),
            other => Err(Error::Config(format!(
                "unknown mlp kind `{other}` (expected fully_connected, kan or sakan)"
            ))),
        }
    }
}

/// Declarative description of a U-shaped segmentation network.
///
/// `stage_channels` lists encoder widths from shallow to deep. The last two
/// entries are tokenized stages; the others are convolutional stages. Every
/// stage halves the resolution, so `resolution` must be divisible by
/// `2^stage_channels.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub num_classes: usize,
    pub stage_channels: Vec<usize>,
    pub conv_kind: ConvKind,
    pub mlp_kind: MlpKind,
    pub grad_free: bool,
    pub chunk: usize,
    pub use_lambda: bool,
    pub tokenized_block_depth: usize,
    pub resolution: (usize, usize),
    pub spline: SplineSpec,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.stage_channels.len();
        if n < 3 {
            return Err(Error::Config(format!(
                "stage_channels needs at least 3 entries (conv stages + 2 token stages), got {n}"
            )));
        }
        if self.stage_channels.contains(&0) || self.input_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.chunk == 0 {
            return Err(Error::Config("chunk must be at least 1".into()));
        }
        let factor = 1usize << n;
        let (h, w) = self.resolution;
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Config(format!(
                "resolution {h}x{w} must be divisible by {factor} for {n} stages"
            )));
        }
        self.spline.validate()
    }

    pub fn spline_options(&self) -> SplineOptions {
        SplineOptions {
            spec: self.spline,
            grad_free: self.grad_free,
            chunk: self.chunk,
            use_lambda: self.use_lambda,
        }
    }

    /// Whether spline-bearing convolutions use shared activations. KAonv
    /// inner layers follow the mixer family: vanilla KAN mixers pair with
    /// vanilla KAN convolutions, anything else with SaKAN.
    pub(crate) fn shared_conv(&self) -> bool {
        self.mlp_kind != MlpKind::Kan
    }

    pub(crate) fn conv_layer_kind(&self) -> LayerKind {
        match self.conv_kind {
            ConvKind::Plain => LayerKind::Conv,
            ConvKind::Kaonv => LayerKind::Kaonv,
        }
    }

    pub(crate) fn mixer_layer_kind(&self) -> LayerKind {
        match self.mlp_kind {
            MlpKind::FullyConnected => LayerKind::Fc,
            MlpKind::Kan => LayerKind::Kan,
            MlpKind::Sakan => LayerKind::Ka,
        }
    }
}
