use rand::Rng;

use super::dense::element_basis;
use super::{
    normal, uniform, Dense, KanLayer, Layer, LayerKind, Linear, SakanLayer, SplineOptions,
};
use crate::autograd::{Param, Var};
use crate::error::{Error, Result};
use crate::spline::{aggregated_basis, SplineSpec};
use crate::tensor::{Element, Tensor};

fn expect_nchw(
    op: &'static str,
    shape: &[usize],
    channels: usize,
) -> Result<(usize, usize, usize)> {
    if shape.len() != 4 || shape[1] != channels {
        let b = shape.first().copied().unwrap_or(0);
        return Err(Error::shape(op, shape, &[b, channels]));
    }
    Ok((shape[0], shape[2], shape[3]))
}

fn out_dim(size: usize, k: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - k) / stride + 1
}

/// `[B·OH·OW, C]` rows back to NCHW.
fn rows_to_nchw<'g, T: Element>(
    y: Var<'g, T>,
    b: usize,
    oh: usize,
    ow: usize,
    c: usize,
) -> Result<Var<'g, T>> {
    y.reshape(&[b, oh, ow, c])?.permute(&[0, 3, 1, 2])
}

/// Convolution by patch unfolding followed by a per-patch map shared across
/// positions. With a [`Linear`] map this is an ordinary convolution; with a
/// spline map it is a KAonv layer.
#[derive(Debug, Clone)]
pub struct ConvLayer<T: Element> {
    inner: Dense<T>,
    in_channels: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
}

impl<T: Element> ConvLayer<T> {
    pub fn from_inner(
        inner: Dense<T>,
        in_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::Config("kernel and stride must be positive".into()));
        }
        let patch = in_channels * kernel.0 * kernel.1;
        if inner.n_in() != patch {
            return Err(Error::shape("conv_inner", &[inner.n_in()], &[patch]));
        }
        Ok(ConvLayer {
            inner,
            in_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn plain(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let inner = Dense::Linear(Linear::new(cin * k * k, cout, rng));
        Self::from_inner(inner, cin, (k, k), stride, padding)
    }

    /// KAonv with a shared-activation inner layer.
    pub fn kaonv(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        opts: &SplineOptions,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let inner = Dense::Sakan(SakanLayer::new(cin * k * k, cout, opts, rng));
        Self::from_inner(inner, cin, (k, k), stride, padding)
    }

    /// KAonv with a vanilla KAN inner layer.
    pub fn kaonv_kan(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        opts: &SplineOptions,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let inner = Dense::Kan(KanLayer::new(
            cin * k * k,
            cout,
            opts.spec,
            opts.grad_free,
            rng,
        ));
        Self::from_inner(inner, cin, (k, k), stride, padding)
    }

    pub fn inner(&self) -> &Dense<T> {
        &self.inner
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.inner.n_out()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if h + 2 * self.padding < kh || w + 2 * self.padding < kw {
            return None;
        }
        Some((
            out_dim(h, kh, self.stride, self.padding),
            out_dim(w, kw, self.stride, self.padding),
        ))
    }

    pub(crate) fn set_grad_free(&mut self, grad_free: bool) {
        self.inner.set_grad_free(grad_free);
    }

    pub(crate) fn set_chunk(&mut self, chunk: usize) -> Result<()> {
        self.inner.set_chunk(chunk)
    }
}

impl<T: Element> Layer<T> for ConvLayer<T> {
    fn forward<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (b, h, w) = expect_nchw("conv_forward", &x.shape(), self.in_channels)?;
        let (oh, ow) = self.output_hw(h, w).ok_or_else(|| {
            Error::shape("conv_forward", &[h, w], &[self.kernel.0, self.kernel.1])
        })?;
        let patches = x.unfold(self.kernel, self.stride, self.padding)?;
        let y = self.inner.forward(patches)?;
        rows_to_nchw(y, b, oh, ow, self.out_channels())
    }

    fn kind(&self) -> LayerKind {
        match self.inner {
            Dense::Linear(_) => LayerKind::Conv,
            _ => LayerKind::Kaonv,
        }
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        self.inner.params()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        self.inner.params_mut()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }
}

/// Per-channel map applied to each channel's receptive field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthwiseKind {
    Plain,
    Sakan,
    Kan,
}

#[derive(Debug, Clone)]
enum DepthwiseParams<T: Element> {
    Plain {
        weight: Param<T>,
        bias: Param<T>,
    },
    Sakan {
        v: Param<T>,
        u: Param<T>,
        lambda: Option<Param<T>>,
    },
    Kan {
        v: Param<T>,
        u: Param<T>,
    },
}

/// Depthwise `k×k` convolution, stride 1, "same" padding. The spline
/// variants run one independent spline layer (`k·k` inputs, one output) per
/// channel.
#[derive(Debug, Clone)]
pub struct DepthwiseConv<T: Element> {
    channels: usize,
    kernel: usize,
    params: DepthwiseParams<T>,
    spec: SplineSpec,
    grad_free: bool,
    chunk: usize,
}

impl<T: Element> DepthwiseConv<T> {
    pub fn new(
        kind: DepthwiseKind,
        channels: usize,
        kernel: usize,
        opts: &SplineOptions,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "depthwise kernel must be odd, got {kernel}"
            )));
        }
        let kk = kernel * kernel;
        let n = opts.spec.n_spline();
        let bound = 1.0 / (kk as f64).sqrt();
        let params = match kind {
            DepthwiseKind::Plain => DepthwiseParams::Plain {
                weight: Param::new(uniform(rng, &[channels, kk], bound)),
                bias: Param::new(uniform(rng, &[channels], bound)),
            },
            DepthwiseKind::Sakan => {
                let u = uniform(rng, &[channels, kk], bound);
                let v = normal(rng, &[channels, n], 0.1 / kk as f64);
                DepthwiseParams::Sakan {
                    v: Param::new(v),
                    u: Param::new(u),
                    lambda: opts
                        .use_lambda
                        .then(|| Param::new(Tensor::ones([channels, kk]))),
                }
            }
            DepthwiseKind::Kan => {
                let u = uniform(rng, &[channels, kk], bound);
                let v = normal(rng, &[channels, kk * n], 0.1 * bound);
                DepthwiseParams::Kan {
                    v: Param::new(v),
                    u: Param::new(u),
                }
            }
        };
        Ok(DepthwiseConv {
            channels,
            kernel,
            params,
            spec: opts.spec,
            grad_free: opts.grad_free,
            chunk: opts.chunk,
        })
    }

    pub fn depthwise_kind(&self) -> DepthwiseKind {
        match self.params {
            DepthwiseParams::Plain { .. } => DepthwiseKind::Plain,
            DepthwiseParams::Sakan { .. } => DepthwiseKind::Sakan,
            DepthwiseParams::Kan { .. } => DepthwiseKind::Kan,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub(crate) fn set_grad_free(&mut self, grad_free: bool) {
        self.grad_free = grad_free;
    }

    pub(crate) fn set_chunk(&mut self, chunk: usize) -> Result<()> {
        if chunk == 0 {
            return Err(Error::Contract("chunk must be at least 1".into()));
        }
        self.chunk = chunk;
        Ok(())
    }
}

impl<T: Element> Layer<T> for DepthwiseConv<T> {
    fn forward<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (b, h, w) = expect_nchw("depthwise_forward", &x.shape(), self.channels)?;
        let g = x.graph();
        let (c, k) = (self.channels, self.kernel);
        let kk = k * k;
        let patches = x.unfold((k, k), 1, k / 2)?;
        let rows = b * h * w;
        let p = patches.reshape(&[rows, c, kk])?;
        let y = match &self.params {
            DepthwiseParams::Plain { weight, bias } => {
                p.mul(g.param(weight))?.sum_axis(2)?.add(g.param(bias))?
            }
            DepthwiseParams::Sakan { v, u, lambda } => {
                let pt = match lambda {
                    Some(l) => p.mul(g.param(l))?,
                    None => p,
                };
                let n = self.spec.n_spline();
                let s = aggregated_basis(
                    pt.reshape(&[rows * c, kk])?,
                    &self.spec,
                    self.chunk,
                    self.grad_free,
                )?;
                let spline = s.reshape(&[rows, c, n])?.mul(g.param(v))?.sum_axis(2)?;
                let residual = pt.silu().mul(g.param(u))?.sum_axis(2)?;
                spline.add(residual)?
            }
            DepthwiseParams::Kan { v, u } => {
                let n = self.spec.n_spline();
                let basis =
                    element_basis(p, &self.spec, self.grad_free)?.reshape(&[rows, c, kk * n])?;
                let spline = basis.mul(g.param(v))?.sum_axis(2)?;
                let residual = p.silu().mul(g.param(u))?.sum_axis(2)?;
                spline.add(residual)?
            }
        };
        rows_to_nchw(y, b, h, w, c)
    }

    fn kind(&self) -> LayerKind {
        match self.params {
            DepthwiseParams::Plain { .. } => LayerKind::Conv,
            _ => LayerKind::Kaonv,
        }
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        match &self.params {
            DepthwiseParams::Plain { weight, bias } => vec![("weight", weight), ("bias", bias)],
            DepthwiseParams::Sakan { v, u, lambda } => {
                let mut out = vec![("v", v), ("u", u)];
                if let Some(l) = lambda {
                    out.push(("lambda", l));
                }
                out
            }
            DepthwiseParams::Kan { v, u } => vec![("v", v), ("u", u)],
        }
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        match &mut self.params {
            DepthwiseParams::Plain { weight, bias } => vec![("weight", weight), ("bias", bias)],
            DepthwiseParams::Sakan { v, u, lambda } => {
                let mut out = vec![("v", v), ("u", u)];
                if let Some(l) = lambda {
                    out.push(("lambda", l));
                }
                out
            }
            DepthwiseParams::Kan { v, u } => vec![("v", v), ("u", u)],
        }
    }

    fn param_count(&self) -> usize {
        let (c, kk, n) = (
            self.channels,
            self.kernel * self.kernel,
            self.spec.n_spline(),
        );
        match &self.params {
            DepthwiseParams::Plain { .. } => c * kk + c,
            DepthwiseParams::Sakan { lambda, .. } => {
                c * n + c * kk + if lambda.is_some() { c * kk } else { 0 }
            }
            DepthwiseParams::Kan { .. } => c * kk * n + c * kk,
        }
    }
}
