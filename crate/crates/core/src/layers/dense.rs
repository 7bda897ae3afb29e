use rand::Rng;

use super::{expect_rank2, normal, uniform, Layer, LayerKind, SplineOptions};
use crate::autograd::kernels::{matmul_nn, silu_grad};
use crate::autograd::{Param, Var};
use crate::error::{Error, Result};
use crate::spline::{
    aggregated_basis, basis_on_tape, eval_basis, eval_basis_derivative, SplineSpec,
};
use crate::tensor::{Element, Tensor};

/// Per-element basis `[.., n_spline]`, taped or as a detached constant.
pub(crate) fn element_basis<'g, T: Element>(
    x: Var<'g, T>,
    spec: &SplineSpec,
    grad_free: bool,
) -> Result<Var<'g, T>> {
    if grad_free {
        let b = eval_basis(&x.value(), spec)?;
        Ok(x.graph().constant(b.values))
    } else {
        basis_on_tape(x, spec)
    }
}

fn check_param(name: &'static str, p: &Tensor<impl Element>, expected: &[usize]) -> Result<()> {
    if p.shape() != expected {
        return Err(Error::ParamShape {
            name: name.to_string(),
            found: p.shape().to_vec(),
            expected: expected.to_vec(),
        });
    }
    Ok(())
}

/// Fully connected layer `y = x·Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Linear<T: Element> {
    n_in: usize,
    n_out: usize,
    weight: Param<T>,
    bias: Param<T>,
}

impl<T: Element> Linear<T> {
    pub fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Linear {
            n_in,
            n_out,
            weight: Param::new(uniform(rng, &[n_out, n_in], bound)),
            bias: Param::new(uniform(rng, &[n_out], bound)),
        }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }
}

impl<T: Element> Layer<T> for Linear<T> {
    fn forward<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        expect_rank2("linear", &x.shape(), self.n_in)?;
        let g = x.graph();
        x.matmul_t(g.param(&self.weight))?.add(g.param(&self.bias))
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Fc
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    fn param_count(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }
}

/// Vanilla KAN layer: one learnable spline per edge plus a SiLU residual,
/// `y[b,i] = Σ_j Σ_k v[i,j,k]·B_k(x[b,j]) + Σ_j u[i,j]·SiLU(x[b,j])`.
#[derive(Debug, Clone)]
pub struct KanLayer<T: Element> {
    n_in: usize,
    n_out: usize,
    v: Param<T>,
    u: Param<T>,
    spec: SplineSpec,
    grad_free: bool,
}

impl<T: Element> KanLayer<T> {
    pub fn new(
        n_in: usize,
        n_out: usize,
        spec: SplineSpec,
        grad_free: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let n = spec.n_spline();
        let fan = (n_in as f64).sqrt();
        let u = uniform(rng, &[n_out, n_in], 1.0 / fan);
        let v = normal(rng, &[n_out, n_in, n], 0.1 / fan);
        KanLayer {
            n_in,
            n_out,
            v: Param::new(v),
            u: Param::new(u),
            spec,
            grad_free,
        }
    }

    /// Layer with explicit coefficients `v: [n_out, n_in, n_spline]` and
    /// residual weights `u: [n_out, n_in]`.
    pub fn from_parts(
        v: Tensor<T>,
        u: Tensor<T>,
        spec: SplineSpec,
        grad_free: bool,
    ) -> Result<Self> {
        spec.validate()?;
        if u.rank() != 2 {
            return Err(Error::Contract(format!(
                "u must be [n_out, n_in], got {:?}",
                u.shape()
            )));
        }
        let (n_out, n_in) = (u.shape()[0], u.shape()[1]);
        check_param("v", &v, &[n_out, n_in, spec.n_spline()])?;
        Ok(KanLayer {
            n_in,
            n_out,
            v: Param::new(v),
            u: Param::new(u),
            spec,
            grad_free,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn grad_free(&self) -> bool {
        self.grad_free
    }

    pub fn set_grad_free(&mut self, grad_free: bool) {
        self.grad_free = grad_free;
    }

    pub fn v(&self) -> &Param<T> {
        &self.v
    }

    pub fn u(&self) -> &Param<T> {
        &self.u
    }

    /// Analytic split of the input gradient of `Σ y ⊙ upstream` into the
    /// spline path `G_S` and the residual path `G_L`.
    pub fn input_grad_split(
        &self,
        x: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let batch = expect_rank2("kan_grad_split", x.shape(), self.n_in)?;
        check_param("upstream", upstream, &[batch, self.n_out])?;
        let n = self.spec.n_spline();
        let d = eval_basis_derivative(x, &self.spec)?;
        let w = matmul_nn(
            upstream.data(),
            self.v.value().data(),
            batch,
            self.n_out,
            self.n_in * n,
        );
        let gs: Vec<T> = w
            .chunks(n)
            .zip(d.data().chunks(n))
            .map(|(wr, dr)| {
                wr.iter()
                    .zip(dr)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect();
        let gl = residual_grad(
            x,
            upstream,
            self.u.value(),
            None,
            batch,
            self.n_out,
            self.n_in,
        );
        Ok((Tensor::new([batch, self.n_in], gs)?, gl))
    }
}

fn residual_grad<T: Element>(
    x: &Tensor<T>,
    upstream: &Tensor<T>,
    u: &Tensor<T>,
    lambda: Option<&Tensor<T>>,
    batch: usize,
    n_out: usize,
    n_in: usize,
) -> Tensor<T> {
    let gu = matmul_nn(upstream.data(), u.data(), batch, n_out, n_in);
    let data = gu
        .iter()
        .enumerate()
        .map(|(idx, &s)| {
            let j = idx % n_in;
            let l = lambda.map_or(T::one(), |l| l.data()[j]);
            s * silu_grad(x.data()[idx] * l) * l
        })
        .collect();
    Tensor::new([batch, n_in], data).expect("residual gradient shape")
}

impl<T: Element> Layer<T> for KanLayer<T> {
    fn forward<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let batch = expect_rank2("kan_forward", &x.shape(), self.n_in)?;
        let g = x.graph();
        let n = self.spec.n_spline();
        let basis =
            element_basis(x, &self.spec, self.grad_free)?.reshape(&[batch, self.n_in * n])?;
        let v = g.param(&self.v).reshape(&[self.n_out, self.n_in * n])?;
        let spline = basis.matmul_t(v)?;
        let residual = x.silu().matmul_t(g.param(&self.u))?;
        spline.add(residual)
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Kan
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        vec![("v", &self.v), ("u", &self.u)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("v", &mut self.v), ("u", &mut self.u)]
    }

    fn param_count(&self) -> usize {
        self.n_in * self.n_out * self.spec.n_spline() + self.n_in * self.n_out
    }
}

/// Shared-activation KAN layer: one spline per output shared by all inputs,
/// `y[b,i] = Σ_k v[i,k]·S[b,k] + Σ_j u[i,j]·SiLU(x̃[b,j])` with
/// `S[b,k] = Σ_j B_k(x̃[b,j])` and `x̃ = λ ⊙ x` when λ is present.
#[derive(Debug, Clone)]
pub struct SakanLayer<T: Element> {
    n_in: usize,
    n_out: usize,
    v: Param<T>,
    u: Param<T>,
    lambda: Option<Param<T>>,
    spec: SplineSpec,
    grad_free: bool,
    chunk: usize,
}

impl<T: Element> SakanLayer<T> {
    pub fn new(n_in: usize, n_out: usize, opts: &SplineOptions, rng: &mut impl Rng) -> Self {
        let n = opts.spec.n_spline();
        let u = uniform(rng, &[n_out, n_in], 1.0 / (n_in as f64).sqrt());
        // Each shared coefficient multiplies a sum over n_in bases.
        let v = normal(rng, &[n_out, n], 0.1 / n_in as f64);
        SakanLayer {
            n_in,
            n_out,
            v: Param::new(v),
            u: Param::new(u),
            lambda: opts.use_lambda.then(|| Param::new(Tensor::ones([n_in]))),
            spec: opts.spec,
            grad_free: opts.grad_free,
            chunk: opts.chunk,
        }
    }

    /// Layer with explicit shared coefficients `v: [n_out, n_spline]`,
    /// residual weights `u: [n_out, n_in]` and optional `λ: [n_in]`.
    pub fn from_parts(
        v: Tensor<T>,
        u: Tensor<T>,
        lambda: Option<Tensor<T>>,
        spec: SplineSpec,
        grad_free: bool,
        chunk: usize,
    ) -> Result<Self> {
        spec.validate()?;
        if chunk == 0 {
            return Err(Error::Contract("chunk must be at least 1".into()));
        }
        if u.rank() != 2 {
            return Err(Error::Contract(format!(
                "u must be [n_out, n_in], got {:?}",
                u.shape()
            )));
        }
        let (n_out, n_in) = (u.shape()[0], u.shape()[1]);
        check_param("v", &v, &[n_out, spec.n_spline()])?;
        if let Some(l) = &lambda {
            check_param("lambda", l, &[n_in])?;
        }
        Ok(SakanLayer {
            n_in,
            n_out,
            v: Param::new(v),
            u: Param::new(u),
            lambda: lambda.map(Param::new),
            spec,
            grad_free,
            chunk,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn grad_free(&self) -> bool {
        self.grad_free
    }

    pub fn set_grad_free(&mut self, grad_free: bool) {
        self.grad_free = grad_free;
    }

    pub fn chunk(&self) -> usize {
        self.chunk
    }

    pub fn set_chunk(&mut self, chunk: usize) -> Result<()> {
        if chunk == 0 {
            return Err(Error::Contract("chunk must be at least 1".into()));
        }
        self.chunk = chunk;
        Ok(())
    }

    pub fn v(&self) -> &Param<T> {
        &self.v
    }

    pub fn u(&self) -> &Param<T> {
        &self.u
    }

    pub fn lambda(&self) -> Option<&Param<T>> {
        self.lambda.as_ref()
    }

    /// The equivalent vanilla KAN layer with `v[i,j,k] = v[i,k]` for all `j`.
    /// Only defined without λ.
    pub fn to_tied_kan(&self) -> Result<KanLayer<T>> {
        if self.lambda.is_some() {
            return Err(Error::Contract("tied KAN form is undefined with λ".into()));
        }
        let n = self.spec.n_spline();
        let v = self.v.value();
        let tied = Tensor::from_fn([self.n_out, self.n_in, n], |idx| {
            let i = idx / (self.n_in * n);
            v.data()[i * n + idx % n]
        });
        KanLayer::from_parts(tied, self.u.value().clone(), self.spec, self.grad_free)
    }

    /// Analytic split of the input gradient of `Σ y ⊙ upstream` into the
    /// spline path `G_S` and the residual path `G_L`.
    pub fn input_grad_split(
        &self,
        x: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let batch = expect_rank2("sakan_grad_split", x.shape(), self.n_in)?;
        check_param("upstream", upstream, &[batch, self.n_out])?;
        let n = self.spec.n_spline();
        let lambda = self.lambda.as_ref().map(|p| p.value());
        let xt = match lambda {
            Some(l) => Tensor::from_fn(x.shape().to_vec(), |idx| {
                x.data()[idx] * l.data()[idx % self.n_in]
            }),
            None => x.clone(),
        };
        let d = eval_basis_derivative(&xt, &self.spec)?;
        let w = matmul_nn(upstream.data(), self.v.value().data(), batch, self.n_out, n);
        let gs: Vec<T> = d
            .data()
            .chunks(n)
            .enumerate()
            .map(|(idx, dr)| {
                let b = idx / self.n_in;
                let l = lambda.map_or(T::one(), |l| l.data()[idx % self.n_in]);
                let wr = &w[b * n..(b + 1) * n];
                wr.iter()
                    .zip(dr)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
                    * l
            })
            .collect();
        let gl = residual_grad(
            x,
            upstream,
            self.u.value(),
            lambda,
            batch,
            self.n_out,
            self.n_in,
        );
        Ok((Tensor::new([batch, self.n_in], gs)?, gl))
    }
}

impl<T: Element> Layer<T> for SakanLayer<T> {
    fn forward<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        expect_rank2("sakan_forward", &x.shape(), self.n_in)?;
        let g = x.graph();
        let xt = match &self.lambda {
            Some(l) => x.mul(g.param(l))?,
            None => x,
        };
        let s = aggregated_basis(xt, &self.spec, self.chunk, self.grad_free)?;
        let spline = s.matmul_t(g.param(&self.v))?;
        let residual = xt.silu().matmul_t(g.param(&self.u))?;
        spline.add(residual)
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Ka
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        let mut out = vec![("v", &self.v), ("u", &self.u)];
        if let Some(l) = &self.lambda {
            out.push(("lambda", l));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        let mut out = vec![("v", &mut self.v), ("u", &mut self.u)];
        if let Some(l) = &mut self.lambda {
            out.push(("lambda", l));
        }
        out
    }

    fn param_count(&self) -> usize {
        let lambda = if self.lambda.is_some() { self.n_in } else { 0 };
        self.n_out * self.spec.n_spline() + self.n_in * self.n_out + lambda
    }
}

/// A per-token map: fully connected, vanilla KAN or SaKAN.
#[derive(Debug, Clone)]
pub enum Dense<T: Element> {
    Linear(Linear<T>),
    Kan(KanLayer<T>),
    Sakan(SakanLayer<T>),
}

impl<T: Element> Dense<T> {
    pub fn n_in(&self) -> usize {
        match self {
            Dense::Linear(l) => l.n_in(),
            Dense::Kan(l) => l.n_in(),
            Dense::Sakan(l) => l.n_in(),
        }
    }

    pub fn n_out(&self) -> usize {
        match self {
            Dense::Linear(l) => l.n_out(),
            Dense::Kan(l) => l.n_out(),
            Dense::Sakan(l) => l.n_out(),
        }
    }

    fn inner(&self) -> &dyn Layer<T> {
        match self {
            Dense::Linear(l) => l,
            Dense::Kan(l) => l,
            Dense::Sakan(l) => l,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Layer<T> {
        match self {
            Dense::Linear(l) => l,
            Dense::Kan(l) => l,
            Dense::Sakan(l) => l,
        }
    }

    pub(crate) fn set_grad_free(&mut self, grad_free: bool) {
        match self {
            Dense::Linear(_) => {}
            Dense::Kan(l) => l.set_grad_free(grad_free),
            Dense::Sakan(l) => l.set_grad_free(grad_free),
        }
    }

    pub(crate) fn set_chunk(&mut self, chunk: usize) -> Result<()> {
        match self {
            Dense::Sakan(l) => l.set_chunk(chunk),
            _ => Ok(()),
        }
    }
}

impl<T: Element> Layer<T> for Dense<T> {
    fn forward<'g>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        self.inner().forward(x)
    }

    fn kind(&self) -> LayerKind {
        self.inner().kind()
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        self.inner().params()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        self.inner_mut().params_mut()
    }

    fn param_count(&self) -> usize {
        self.inner().param_count()
    }
}
