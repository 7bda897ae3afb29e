use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::ops::Op;
use super::param::{Param, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub(crate) type NodeId = usize;

/// A buffer an operation keeps alive for its backward rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Saved {
    /// The value of another node.
    Node(NodeId),
    /// The operation's own output.
    Output,
    /// Op-private scratch of the given size in bytes.
    Bytes(usize),
}

pub(crate) struct Node<T: Element> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op<T>>,
    pub(crate) saved: Vec<Saved>,
    grad: Option<Tensor<T>>,
}

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order, so backward is a single reverse sweep.
pub struct Graph<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, NodeId>>,
    track_params: bool,
    peak_transient: Cell<usize>,
}

/// Handle to a node of a [`Graph`].
pub struct Var<'g, T: Element> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: NodeId,
}

impl<T: Element> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Element> Copy for Var<'_, T> {}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    /// Training graph: parameters enter as leaves that require grad.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            track_params: true,
            peak_transient: Cell::new(0),
        }
    }

    /// Inference graph: parameters enter as constants, so nothing is taped.
    pub fn inference() -> Self {
        Graph {
            track_params: false,
            ..Self::new()
        }
    }

    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        op: Option<Op<T>>,
        requires_grad: bool,
        saved: Vec<Saved>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let (op, saved) = if requires_grad {
            (op, saved)
        } else {
            (None, Vec::new())
        };
        nodes.push(Node {
            value: Arc::new(value),
            requires_grad,
            op,
            saved,
            grad: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push_shared(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op: None,
            saved: Vec::new(),
            grad: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, None, requires_grad, Vec::new())
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Enters a parameter; repeated calls with the same parameter return the same node.
    pub fn param(&self, p: &Param<T>) -> Var<'_, T> {
        if let Some(&id) = self.params.borrow().get(&p.id()) {
            return Var { graph: self, id };
        }
        let v = self.push_shared(p.shared_value(), self.track_params);
        self.params.borrow_mut().insert(p.id(), v.id);
        v
    }

    /// Same values, no gradient, no tape entry.
    pub fn detach(&self, v: Var<'_, T>) -> Var<'_, T> {
        let value = Arc::clone(&self.nodes.borrow()[v.id].value);
        self.push_shared(value, false)
    }

    pub(crate) fn value_of(&self, id: NodeId) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Number of recorded operations.
    pub fn num_ops(&self) -> usize {
        self.nodes
            .borrow()
            .iter()
            .filter(|n| n.op.is_some())
            .count()
    }

    /// Propagates gradients from a scalar `loss` into every reachable leaf
    /// that requires grad. Leaf gradients accumulate across calls.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.rank() != 0 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if root.op.is_none() {
            return Err(Error::Tape(
                "loss has no recorded operations; run a forward pass first".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones([]));
        let mut leaf_grads = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                None => {
                    if node.requires_grad {
                        leaf_grads.push((id, g));
                    }
                }
                Some(op) => {
                    let ctx = BackwardCtx { nodes: &nodes, id };
                    op.backward(&ctx, g, &mut grads)?;
                }
            }
        }
        drop(nodes);
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.nodes.borrow()[v.id].grad.clone()
    }

    pub fn param_grad(&self, p: &Param<T>) -> Option<Tensor<T>> {
        let id = *self.params.borrow().get(&p.id())?;
        self.nodes.borrow()[id].grad.clone()
    }

    /// Adds this graph's gradient for `p` (if any) into `p`'s gradient.
    pub fn accumulate_into(&self, p: &mut Param<T>) -> Result<()> {
        if let Some(g) = self.param_grad(p) {
            p.accumulate_grad(&g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Total bytes of buffers retained for backward. A node saved by several
    /// operations is counted once.
    pub fn saved_activation_bytes(&self) -> usize {
        let nodes = self.nodes.borrow();
        let mut seen = HashSet::new();
        let mut total = 0;
        for (id, n) in nodes.iter().enumerate() {
            for s in &n.saved {
                match *s {
                    Saved::Node(other) => {
                        if seen.insert(other) {
                            total += nodes[other].value.nbytes();
                        }
                    }
                    Saved::Output => {
                        if seen.insert(id) {
                            total += n.value.nbytes();
                        }
                    }
                    Saved::Bytes(b) => total += b,
                }
            }
        }
        total
    }

    /// Records a transient (never saved) buffer size; the graph keeps the peak.
    pub fn note_transient(&self, bytes: usize) {
        if bytes > self.peak_transient.get() {
            self.peak_transient.set(bytes);
        }
    }

    pub fn peak_transient_bytes(&self) -> usize {
        self.peak_transient.get()
    }
}

pub(crate) struct BackwardCtx<'a, T: Element> {
    nodes: &'a [Node<T>],
    id: NodeId,
}

impl<T: Element> BackwardCtx<'_, T> {
    /// Reads a buffer the op declared as saved.
    pub(crate) fn saved(&self, id: NodeId) -> &Tensor<T> {
        debug_assert!(
            self.nodes[self.id].saved.contains(&Saved::Node(id)),
            "op #{} read undeclared buffer #{id}",
            self.id
        );
        &self.nodes[id].value
    }

    pub(crate) fn output(&self) -> &Tensor<T> {
        debug_assert!(self.nodes[self.id].saved.contains(&Saved::Output));
        &self.nodes[self.id].value
    }

    pub(crate) fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub(crate) fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }
}

impl<'g, T: Element> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad_of(self.id)
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.graph.grad(*self)
    }

    pub fn detach(self) -> Var<'g, T> {
        self.graph.detach(self)
    }
}
