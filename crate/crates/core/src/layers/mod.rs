//! Layer kinds: vanilla KAN, shared-activation KAN (SaKAN), KAonv
//! convolutions built on either, and plain linear/convolution baselines.
//!
//! Every layer maps a [`Var`] to a [`Var`] on the input's graph and exposes
//! its trainable tensors by name. `param_count` is computed from layer
//! dimensions, independently of the registered tensors.

mod conv;
mod dense;

pub use conv::{ConvLayer, DepthwiseConv, DepthwiseKind};
pub use dense::{Dense, KanLayer, Linear, SakanLayer};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Param, Var};
use crate::error::{Error, Result};
use crate::spline::SplineSpec;
use crate::tensor::{Element, Tensor};

/// Structural role of a layer, used for introspection and audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Convolution whose per-patch map is a spline layer.
    Kaonv,
    /// Standalone shared-activation layer (a KA layer when grad-free).
    Ka,
    /// Standalone vanilla KAN layer.
    Kan,
    /// Fully connected layer with bias.
    Fc,
    /// Plain convolution with bias.
    Conv,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Kaonv => "kaonv",
            LayerKind::Ka => "ka",
            LayerKind::Kan => "kan",
            LayerKind::Fc => "fc",
            LayerKind::Conv => "conv",
        }
    }
}

/// Spline settings shared by the spline-bearing layers of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineOptions {
    pub spec: SplineSpec,
    pub grad_free: bool,
    /// Input slice width for the chunked aggregated basis.
    pub chunk: usize,
    pub use_lambda: bool,
}

impl Default for SplineOptions {
    fn default() -> Self {
        SplineOptions {
            spec: SplineSpec::default(),
            grad_free: false,
            chunk: 32,
            use_lambda: false,
        }
    }
}

pub trait Layer<T: Element>: Send + Sync {
    fn forward<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>>;
    fn kind(&self) -> LayerKind;
    /// Trainable tensors in a fixed order with layer-local names.
    fn params(&self) -> Vec<(&'static str, &Param<T>)>;
    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)>;
    /// Trainable scalar count from the layer's dimensions.
    fn param_count(&self) -> usize;
}

pub(crate) fn uniform<T: Element>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| {
        T::from_f64_lossy(rng.random_range(-bound..=bound))
    })
}

pub(crate) fn normal<T: Element>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(dist.sample(rng)))
}

pub(crate) fn expect_rank2(op: &'static str, x: &[usize], n_in: usize) -> Result<usize> {
    if x.len() != 2 || x[1] != n_in {
        let batch = x.first().copied().unwrap_or(0);
        return Err(Error::shape(op, x, &[batch, n_in]));
    }
    Ok(x[0])
}

/// Gradients of `L = Σ y ⊙ upstream` with respect to every parameter and
/// the input.
#[derive(Debug, Clone)]
pub struct LayerGrads<T: Element> {
    pub output: Tensor<T>,
    pub params: Vec<(&'static str, Tensor<T>)>,
    pub input: Option<Tensor<T>>,
}

impl<T: Element> LayerGrads<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }
}

/// Runs forward and backward of a single layer on a fresh graph.
pub fn backward_contract<T: Element, L: Layer<T> + ?Sized>(
    layer: &L,
    x: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let y = layer.forward(xv)?;
    if y.shape() != upstream.shape() {
        return Err(Error::shape(
            "backward_contract",
            &y.shape(),
            upstream.shape(),
        ));
    }
    let loss = y.mul(g.constant(upstream.clone()))?.sum_all();
    g.backward(loss)?;
    let params = layer
        .params()
        .into_iter()
        .map(|(name, p)| {
            let grad = g
                .param_grad(p)
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()));
            (name, grad)
        })
        .collect();
    Ok(LayerGrads {
        output: (*y.value()).clone(),
        params,
        input: xv.grad(),
    })
}
