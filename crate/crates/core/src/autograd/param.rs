use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a trainable tensor, stable across clones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(u64);

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T: Element> {
    id: ParamId,
    value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
}

impl<T: Element> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Param {
            id: ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)),
            value: Arc::new(value),
            grad: None,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn shared_value(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &Tensor<T>) -> Result<()> {
        if g.shape() != self.shape() {
            return Err(Error::shape("accumulate_grad", self.shape(), g.shape()));
        }
        match &mut self.grad {
            Some(acc) => acc.add_assign(g),
            slot => *slot = Some(g.clone()),
        }
        Ok(())
    }

    /// Replaces the value; the shape must not change.
    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.shape() {
            return Err(Error::shape("set_value", self.shape(), value.shape()));
        }
        self.value = Arc::new(value);
        Ok(())
    }

    /// Mutable access to the elements, copying if a graph still shares them.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.value).data_mut()
    }
}
