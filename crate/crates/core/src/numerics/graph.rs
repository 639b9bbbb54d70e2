//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution
//! order. [`Graph::backward`] walks the tape in reverse and accumulates
//! vector-Jacobian products into the inputs. Graphs are single-use: build one
//! per forward pass and drop it afterwards.

use super::params::{ParamId, ParamStore};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a recorded operation.
///
/// `grad_in[k]` is `Some(zeros)` when input `k` needs a gradient; the
/// implementation adds its contribution in place.
pub trait Backward: Send {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]);
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    op: Option<Box<dyn Backward>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(Var, ParamId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are accumulated iff `requires_grad` is set.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.requires_grad = false;
        self.leaf(value)
    }

    /// Binds a stored parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let mut t = p.tensor.clone();
        t.requires_grad = !p.frozen;
        let v = self.leaf(t);
        self.params.push((v, id));
        v
    }

    /// Records the result of an operation. The backward closure is dropped
    /// when no parent requires a gradient.
    pub fn push(&mut self, mut value: Tensor, parents: Vec<Var>, op: impl Backward + 'static) -> Var {
        let requires = parents.iter().any(|p| self.nodes[p.0].value.requires_grad);
        value.requires_grad = requires;
        value.grad = None;
        self.nodes.push(Node {
            value,
            parents,
            op: requires.then(|| Box::new(op) as Box<dyn Backward>),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Gradient of the last `backward` target w.r.t. a leaf.
    pub fn grad(&self, v: Var) -> Option<&[Scalar]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    /// Runs reverse-mode accumulation from a scalar output. Gradients of
    /// intermediate nodes are released as soon as they have been propagated;
    /// leaf gradients are kept.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let out = &self.nodes[loss.0].value;
        if out.numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: out.shape().to_vec(),
                rhs: vec![1],
            });
        }
        if !out.requires_grad {
            return Ok(());
        }
        for n in &mut self.nodes {
            n.value.grad = None;
        }
        self.nodes[loss.0].value.grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].op.is_none() {
                continue;
            }
            let Some(gout) = self.nodes[i].value.grad.take() else {
                continue;
            };
            let node = &self.nodes[i];
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let mut grad_in: Vec<Option<Vec<Scalar>>> = inputs.iter().map(|t| t.requires_grad.then(|| vec![0.0; t.numel()])).collect();
            node.op.as_ref().unwrap().backward(&inputs, &node.value, &gout, &mut grad_in);
            let parents = node.parents.clone();
            for (p, g) in parents.into_iter().zip(grad_in) {
                let Some(g) = g else { continue };
                let slot = &mut self.nodes[p.0].value.grad;
                match slot {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Gradients of every bound, trainable parameter, in binding order.
    /// Parameters bound more than once have their gradients summed.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<Scalar>)> {
        let mut out: Vec<(ParamId, Vec<Scalar>)> = Vec::new();
        for &(v, id) in &self.params {
            let Some(g) = self.grad(v) else { continue };
            match out.iter_mut().find(|(pid, _)| *pid == id) {
                Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => out.push((id, g.to_vec())),
            }
        }
        out
    }
}
