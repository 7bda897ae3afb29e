//! U-shaped encoder–decoder segmentation networks assembled from a
//! [`ModelConfig`], with presets for every ablation row.
//!
//! Topology for `stage_channels = [c_0, .., c_{m-1}, t_0, t_1]`:
//!
//! * encoder: per conv stage, a stride-2 conv then a stride-1 conv; each
//!   stage output is a skip;
//! * bottleneck: per token stage, a stride-2 patch-embedding conv followed
//!   by `tokenized_block_depth` token blocks; the `t_0` output is a skip;
//! * decoder: upsample, concatenate the matching skip, two convs, mirrored
//!   down to `c_0`; the two deepest decoder stages end with token blocks; a
//!   final upsample returns to full resolution before two more convs;
//! * head: 1×1 conv to `num_classes` logits.
//!
//! A token block maps `x` to `x + h`, with `h` three rounds of token mixer
//! followed by a 3×3 depthwise conv. Every layer sees normalized input, and
//! every conv except the head is followed by SiLU.

mod config;
mod presets;

pub use config::{ConvKind, MlpKind, ModelConfig};
pub use presets::{
    preset, preset_names, DESK_CHANNELS, DESK_RESOLUTION, FULL_CHANNELS, FULL_RESOLUTION,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Param, Var};
use crate::error::{Error, Result};
use crate::layers::{
    ConvLayer, Dense, DepthwiseConv, DepthwiseKind, KanLayer, Layer, LayerKind, Linear, SakanLayer,
};
use crate::tensor::Element;

const NORM_EPS: f64 = 1e-5;
const MIXERS_PER_BLOCK: usize = 3;

/// Normalizes each sample of an NCHW map over all its channels and pixels.
fn norm_map<'g, T: Element>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    let s = x.shape();
    x.normalize(s[1] * s[2] * s[3], T::from_f64_lossy(NORM_EPS))
}

fn conv_unit<'g, T: Element>(layer: &ConvLayer<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(layer.forward(norm_map(x)?)?.silu())
}

#[derive(Debug, Clone)]
struct TokenBlock<T: Element> {
    mixers: Vec<Dense<T>>,
    depthwise: Vec<DepthwiseConv<T>>,
}

impl<T: Element> TokenBlock<T> {
    fn forward<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let eps = T::from_f64_lossy(NORM_EPS);
        let mut y = x;
        for (mixer, dw) in self.mixers.iter().zip(&self.depthwise) {
            let tokens = y.permute(&[0, 2, 3, 1])?.reshape(&[b * h * w, c])?;
            let mixed = mixer.forward(tokens.normalize(c, eps)?)?;
            y = mixed.reshape(&[b, h, w, c])?.permute(&[0, 3, 1, 2])?;
            y = dw.forward(norm_map(y)?)?.silu();
        }
        x.add(y)
    }
}

#[derive(Debug, Clone)]
struct Stage<T: Element> {
    convs: Vec<ConvLayer<T>>,
    blocks: Vec<TokenBlock<T>>,
}

impl<T: Element> Stage<T> {
    fn forward<'g>(&self, mut x: Var<'g, T>) -> Result<Var<'g, T>> {
        for conv in &self.convs {
            x = conv_unit(conv, x)?;
        }
        for block in &self.blocks {
            x = block.forward(x)?;
        }
        Ok(x)
    }
}

/// Planned layer: registry name prefix, kind and parameter count computed
/// from dimensions alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    pub name: String,
    pub kind: LayerKind,
    pub params: usize,
}

/// Dimensions of one layer before it is allocated.
#[derive(Debug, Clone, Copy)]
enum Spec {
    Conv {
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    },
    Depthwise {
        channels: usize,
    },
    Mixer {
        width: usize,
    },
}

struct StagePlan {
    prefix: String,
    convs: Vec<(&'static str, Spec)>,
    blocks: usize,
    width: usize,
}

impl StagePlan {
    fn layers(&self) -> Vec<(String, Spec)> {
        let mut out: Vec<(String, Spec)> = self
            .convs
            .iter()
            .map(|(name, spec)| (format!("{}.{name}", self.prefix), *spec))
            .collect();
        for d in 0..self.blocks {
            for r in 0..MIXERS_PER_BLOCK {
                let w = self.width;
                out.push((
                    format!("{}.block{d}.mix{r}", self.prefix),
                    Spec::Mixer { width: w },
                ));
                out.push((
                    format!("{}.block{d}.dw{r}", self.prefix),
                    Spec::Depthwise { channels: w },
                ));
            }
        }
        out
    }
}

/// Stage structure shared by [`ModelConfig::layer_plan`] and
/// [`Network::build`].
struct Blueprint {
    encoder: Vec<StagePlan>,
    tokens: Vec<StagePlan>,
    decoder: Vec<StagePlan>,
    head: StagePlan,
}

impl Blueprint {
    fn new(cfg: &ModelConfig) -> Self {
        let ch = &cfg.stage_channels;
        let n = ch.len();
        let m = n - 2;
        let depth = cfg.tokenized_block_depth;
        let conv = |cin, cout, stride| Spec::Conv {
            cin,
            cout,
            k: 3,
            stride,
        };
        let stage = |prefix: String, convs, blocks, width| StagePlan {
            prefix,
            convs,
            blocks,
            width,
        };
        let mut prev = cfg.input_channels;
        let mut encoder = Vec::new();
        for (i, &c) in ch.iter().enumerate().take(m) {
            encoder.push(stage(
                format!("enc{i}"),
                vec![("conv0", conv(prev, c, 2)), ("conv1", conv(c, c, 1))],
                0,
                c,
            ));
            prev = c;
        }
        let mut tokens = Vec::new();
        for (t, &c) in ch.iter().enumerate().skip(m) {
            tokens.push(stage(
                format!("tok{}", t - m),
                vec![("embed", conv(prev, c, 2))],
                depth,
                c,
            ));
            prev = c;
        }
        // Decoder stage s joins skip n-2-s; the last stage has no skip.
        let mut decoder = Vec::new();
        for s in 0..n {
            let (cin, target) = if s + 1 < n {
                (prev + ch[n - 2 - s], ch[n - 2 - s])
            } else {
                (prev, prev)
            };
            let blocks = if s < 2 { depth } else { 0 };
            decoder.push(stage(
                format!("dec{s}"),
                vec![
                    ("conv0", conv(cin, target, 1)),
                    ("conv1", conv(target, target, 1)),
                ],
                blocks,
                target,
            ));
            prev = target;
        }
        let head_conv = Spec::Conv {
            cin: prev,
            cout: cfg.num_classes,
            k: 1,
            stride: 1,
        };
        let head = StagePlan {
            prefix: "head".into(),
            convs: vec![("conv", head_conv)],
            blocks: 0,
            width: prev,
        };
        Blueprint {
            encoder,
            tokens,
            decoder,
            head,
        }
    }

    fn stages(&self) -> impl Iterator<Item = &StagePlan> {
        self.encoder
            .iter()
            .chain(&self.tokens)
            .chain(&self.decoder)
            .chain(std::iter::once(&self.head))
    }
}

impl ModelConfig {
    /// Every layer with its kind and parameter count, without allocating.
    pub fn layer_plan(&self) -> Result<Vec<LayerPlan>> {
        self.validate()?;
        let n = self.spline.n_spline();
        let lambda = self.use_lambda;
        let shared = self.shared_conv();
        let plan = Blueprint::new(self)
            .stages()
            .flat_map(StagePlan::layers)
            .map(|(name, spec)| {
                let (kind, params) = match spec {
                    Spec::Conv { cin, cout, k, .. } => {
                        let n_in = cin * k * k;
                        let params = match (self.conv_kind, shared) {
                            (ConvKind::Plain, _) => n_in * cout + cout,
                            (ConvKind::Kaonv, true) => {
                                cout * n + n_in * cout + if lambda { n_in } else { 0 }
                            }
                            (ConvKind::Kaonv, false) => n_in * cout * n + n_in * cout,
                        };
                        (self.conv_layer_kind(), params)
                    }
                    Spec::Depthwise { channels: c } => {
                        let params = match (self.conv_kind, shared) {
                            (ConvKind::Plain, _) => c * 9 + c,
                            (ConvKind::Kaonv, true) => {
                                c * n + c * 9 + if lambda { c * 9 } else { 0 }
                            }
                            (ConvKind::Kaonv, false) => c * 9 * n + c * 9,
                        };
                        (self.conv_layer_kind(), params)
                    }
                    Spec::Mixer { width: c } => {
                        let params = match self.mlp_kind {
                            MlpKind::FullyConnected => c * c + c,
                            MlpKind::Kan => c * c * n + c * c,
                            MlpKind::Sakan => c * n + c * c + if lambda { c } else { 0 },
                        };
                        (self.mixer_layer_kind(), params)
                    }
                };
                LayerPlan { name, kind, params }
            })
            .collect();
        Ok(plan)
    }

    /// Total trainable scalars from [`ModelConfig::layer_plan`].
    pub fn planned_param_count(&self) -> Result<usize> {
        Ok(self.layer_plan()?.iter().map(|l| l.params).sum())
    }
}

/// Any layer of a network, for introspection.
#[derive(Clone, Copy)]
pub enum LayerRef<'a, T: Element> {
    Conv(&'a ConvLayer<T>),
    Depthwise(&'a DepthwiseConv<T>),
    Mixer(&'a Dense<T>),
}

impl<'a, T: Element> LayerRef<'a, T> {
    pub fn layer(self) -> &'a dyn Layer<T> {
        match self {
            LayerRef::Conv(l) => l,
            LayerRef::Depthwise(l) => l,
            LayerRef::Mixer(l) => l,
        }
    }
}

/// A built segmentation network with a named parameter registry.
#[derive(Debug, Clone)]
pub struct Network<T: Element> {
    config: ModelConfig,
    encoder: Vec<Stage<T>>,
    tokens: Vec<Stage<T>>,
    decoder: Vec<Stage<T>>,
    head: ConvLayer<T>,
}

struct Builder<'a, R> {
    config: &'a ModelConfig,
    opts: crate::layers::SplineOptions,
    rng: &'a mut R,
}

impl<R: rand::Rng> Builder<'_, R> {
    fn conv<T: Element>(&mut self, spec: Spec) -> Result<ConvLayer<T>> {
        let Spec::Conv {
            cin,
            cout,
            k,
            stride,
        } = spec
        else {
            return Err(Error::Contract("expected a conv spec".into()));
        };
        let pad = k / 2;
        let opts = &self.opts;
        match (self.config.conv_kind, self.config.shared_conv()) {
            (ConvKind::Plain, _) => ConvLayer::plain(cin, cout, k, stride, pad, self.rng),
            (ConvKind::Kaonv, true) => ConvLayer::kaonv(cin, cout, k, stride, pad, opts, self.rng),
            (ConvKind::Kaonv, false) => {
                ConvLayer::kaonv_kan(cin, cout, k, stride, pad, opts, self.rng)
            }
        }
    }

    fn block<T: Element>(&mut self, width: usize) -> Result<TokenBlock<T>> {
        let dw_kind = match (self.config.conv_kind, self.config.shared_conv()) {
            (ConvKind::Plain, _) => DepthwiseKind::Plain,
            (ConvKind::Kaonv, true) => DepthwiseKind::Sakan,
            (ConvKind::Kaonv, false) => DepthwiseKind::Kan,
        };
        let mut mixers = Vec::new();
        let mut depthwise = Vec::new();
        for _ in 0..MIXERS_PER_BLOCK {
            let opts = &self.opts;
            mixers.push(match self.config.mlp_kind {
                MlpKind::FullyConnected => Dense::Linear(Linear::new(width, width, self.rng)),
                MlpKind::Kan => Dense::Kan(KanLayer::new(
                    width,
                    width,
                    opts.spec,
                    opts.grad_free,
                    self.rng,
                )),
                MlpKind::Sakan => Dense::Sakan(SakanLayer::new(width, width, opts, self.rng)),
            });
            depthwise.push(DepthwiseConv::new(dw_kind, width, 3, &self.opts, self.rng)?);
        }
        Ok(TokenBlock { mixers, depthwise })
    }

    fn stage<T: Element>(&mut self, plan: &StagePlan) -> Result<Stage<T>> {
        let convs = plan
            .convs
            .iter()
            .map(|(_, spec)| self.conv(*spec))
            .collect::<Result<_>>()?;
        let blocks = (0..plan.blocks)
            .map(|_| self.block(plan.width))
            .collect::<Result<_>>()?;
        Ok(Stage { convs, blocks })
    }
}

impl<T: Element> Network<T> {
    /// Builds and initializes a network; parameters are drawn in build order
    /// from a ChaCha stream seeded with `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bp = Blueprint::new(config);
        let mut b = Builder {
            config,
            opts: config.spline_options(),
            rng: &mut rng,
        };
        let encoder = bp
            .encoder
            .iter()
            .map(|p| b.stage(p))
            .collect::<Result<_>>()?;
        let tokens = bp
            .tokens
            .iter()
            .map(|p| b.stage(p))
            .collect::<Result<_>>()?;
        let decoder = bp
            .decoder
            .iter()
            .map(|p| b.stage(p))
            .collect::<Result<_>>()?;
        let head = b.conv(bp.head.convs[0].1)?;
        Ok(Network {
            config: config.clone(),
            encoder,
            tokens,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Logits `[batch, num_classes, H, W]` for images `[batch, C, H, W]`.
    pub fn forward<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        let factor = 1usize << self.config.stage_channels.len();
        if s.len() != 4 || s[1] != self.config.input_channels {
            let b = s.first().copied().unwrap_or(0);
            return Err(Error::shape(
                "network_forward",
                &s,
                &[b, self.config.input_channels],
            ));
        }
        if !s[2].is_multiple_of(factor) || !s[3].is_multiple_of(factor) {
            return Err(Error::Contract(format!(
                "input {}x{} not divisible by {factor}",
                s[2], s[3]
            )));
        }
        let g = x.graph();
        let mut skips = Vec::new();
        let mut h = x;
        for stage in self.encoder.iter().chain(&self.tokens) {
            h = stage.forward(h)?;
            skips.push(h);
        }
        // The deepest stage output is the decoder input, not a skip.
        skips.pop();
        for stage in &self.decoder {
            h = h.upsample2x()?;
            if let Some(skip) = skips.pop() {
                h = g.concat(&[h, skip], 1)?;
            }
            h = stage.forward(h)?;
        }
        self.head.forward(norm_map(h)?)
    }

    /// Every layer in build order with its registry prefix.
    pub fn layers(&self) -> Vec<(String, LayerRef<'_, T>)> {
        let bp = Blueprint::new(&self.config);
        let mut out = Vec::new();
        let stages = self.encoder.iter().chain(&self.tokens).chain(&self.decoder);
        for (plan, stage) in bp.stages().zip(stages) {
            for ((name, _), conv) in plan.convs.iter().zip(&stage.convs) {
                out.push((format!("{}.{name}", plan.prefix), LayerRef::Conv(conv)));
            }
            for (d, block) in stage.blocks.iter().enumerate() {
                for (r, (mixer, dw)) in block.mixers.iter().zip(&block.depthwise).enumerate() {
                    out.push((
                        format!("{}.block{d}.mix{r}", plan.prefix),
                        LayerRef::Mixer(mixer),
                    ));
                    out.push((
                        format!("{}.block{d}.dw{r}", plan.prefix),
                        LayerRef::Depthwise(dw),
                    ));
                }
            }
        }
        out.push(("head.conv".to_string(), LayerRef::Conv(&self.head)));
        out
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut dyn Layer<T>)> {
        let names: Vec<String> = self.layers().into_iter().map(|(n, _)| n).collect();
        let mut refs: Vec<&mut dyn Layer<T>> = Vec::new();
        for stage in self
            .encoder
            .iter_mut()
            .chain(&mut self.tokens)
            .chain(&mut self.decoder)
        {
            for conv in &mut stage.convs {
                refs.push(conv);
            }
            for block in &mut stage.blocks {
                for (mixer, dw) in block.mixers.iter_mut().zip(&mut block.depthwise) {
                    refs.push(mixer);
                    refs.push(dw);
                }
            }
        }
        refs.push(&mut self.head);
        names.into_iter().zip(refs).collect()
    }

    /// Every trainable tensor exactly once, as `layer.tensor` names.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        self.layers()
            .into_iter()
            .flat_map(|(prefix, l)| {
                l.layer()
                    .params()
                    .into_iter()
                    .map(move |(n, p)| (format!("{prefix}.{n}"), p))
            })
            .collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(prefix, l)| {
                l.params_mut()
                    .into_iter()
                    .map(move |(n, p)| (format!("{prefix}.{n}"), p))
            })
            .collect()
    }

    /// Sum of per-layer formula counts.
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|(_, l)| l.layer().param_count())
            .sum()
    }

    /// Sum of the sizes of all registered tensors.
    pub fn enumerated_param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.numel()).sum()
    }

    pub fn count_layers(&self, kind: LayerKind) -> usize {
        self.layers()
            .iter()
            .filter(|(_, l)| l.layer().kind() == kind)
            .count()
    }

    /// Switches every spline-bearing layer between full and grad-free mode.
    pub fn set_grad_free(&mut self, grad_free: bool) {
        self.config.grad_free = grad_free;
        self.for_each_layer(|l| {
            match l {
                AnyLayerMut::Conv(c) => c.set_grad_free(grad_free),
                AnyLayerMut::Depthwise(d) => d.set_grad_free(grad_free),
                AnyLayerMut::Mixer(m) => m.set_grad_free(grad_free),
            }
            Ok(())
        })
        .expect("setting grad mode cannot fail");
    }

    pub fn set_chunk(&mut self, chunk: usize) -> Result<()> {
        if chunk == 0 {
            return Err(Error::Config("chunk must be at least 1".into()));
        }
        self.config.chunk = chunk;
        self.for_each_layer(|l| match l {
            AnyLayerMut::Conv(c) => c.set_chunk(chunk),
            AnyLayerMut::Depthwise(d) => d.set_chunk(chunk),
            AnyLayerMut::Mixer(m) => m.set_chunk(chunk),
        })
    }

    fn for_each_layer(
        &mut self,
        mut f: impl FnMut(AnyLayerMut<'_, T>) -> Result<()>,
    ) -> Result<()> {
        for stage in self
            .encoder
            .iter_mut()
            .chain(&mut self.tokens)
            .chain(&mut self.decoder)
        {
            for conv in &mut stage.convs {
                f(AnyLayerMut::Conv(conv))?;
            }
            for block in &mut stage.blocks {
                for (mixer, dw) in block.mixers.iter_mut().zip(&mut block.depthwise) {
                    f(AnyLayerMut::Mixer(mixer))?;
                    f(AnyLayerMut::Depthwise(dw))?;
                }
            }
        }
        f(AnyLayerMut::Conv(&mut self.head))
    }
}

enum AnyLayerMut<'a, T: Element> {
    Conv(&'a mut ConvLayer<T>),
    Depthwise(&'a mut DepthwiseConv<T>),
    Mixer(&'a mut Dense<T>),
}
