//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Nodes whose
//! inputs all lack gradients are stored as constants without an op record,
//! so inference on a tape with no differentiable leaves records nothing to
//! replay. [`Tape::backward`] walks the records once in reverse and
//! accumulates into the gradient slots of differentiable leaves.
//!
//! ```
//! use laneforge::autograd::Tape;
//! use laneforge::tensor::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![2.0, -4.0, 1.0]);
//! ```

mod gradcheck;
mod ops;

use std::cell::RefCell;

pub use gradcheck::{finite_difference_check, FdReport};

use crate::tensor::{Element, Result, Tensor, TensorError};
use ops::Op;

pub type NodeId = usize;

struct Node<E> {
    value: Tensor<E>,
    requires_grad: bool,
    op: Option<Op>,
    grad: Option<Tensor<E>>,
}

/// Records operations for one forward/backward pass. Single-threaded.
pub struct Tape<E: Element> {
    nodes: RefCell<Vec<Node<E>>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, E: Element> {
    tape: &'t Tape<E>,
    id: NodeId,
}

impl<E: Element> Clone for Var<'_, E> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<E: Element> Copy for Var<'_, E> {}

impl<E: Element> std::fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Differentiable leaf (parameter or input under test).
    pub fn leaf(&self, value: Tensor<E>) -> Var<'_, E> {
        self.push(value, true, None)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.push(value, false, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded op records (nodes that will be visited by backward).
    pub fn record_count(&self) -> usize {
        self.nodes.borrow().iter().filter(|n| n.op.is_some()).count()
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, var: Var<'_, E>) -> Option<Tensor<E>> {
        self.nodes.borrow()[var.id].grad.clone()
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn push(&self, value: Tensor<E>, requires_grad: bool, op: Option<Op>) -> Var<'_, E> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: NodeId) -> Tensor<E> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Appends an op output, checking it is finite.
    fn record(&self, name: &'static str, value: Tensor<E>, op: Op) -> Result<Var<'_, E>> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|&i| self.requires_grad(i));
        Ok(self.push(value, requires_grad, requires_grad.then_some(op)))
    }

    /// Populates `d root / d leaf` for every differentiable leaf that `root` depends on.
    ///
    /// Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&self, root: Var<'_, E>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.len() != 1 {
            return Err(TensorError::NotScalar(root_node.value.shape().to_vec()));
        }
        if !root_node.requires_grad {
            return Err(TensorError::Detached);
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::ones(root_node.value.shape()));
        let mut leaf_grads = Vec::new();
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            match &node.op {
                None => {
                    if node.requires_grad {
                        leaf_grads.push((id, g));
                    }
                }
                Some(op) => {
                    for (input, gi) in op.backward(&g, &node.value, &nodes)? {
                        let shape = nodes[input].value.shape();
                        let gi = if gi.shape() == shape { gi } else { gi.reshape(shape)? };
                        accumulate(&mut grads[input], gi);
                    }
                }
            }
        }
        drop(nodes);
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            accumulate(&mut nodes[id].grad, g);
        }
        Ok(())
    }
}

fn accumulate<E: Element>(slot: &mut Option<Tensor<E>>, g: Tensor<E>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

impl<'t, E: Element> Var<'t, E> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    pub fn value(&self) -> Tensor<E> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> Option<E> {
        self.tape.nodes.borrow()[self.id].value.item()
    }
}
