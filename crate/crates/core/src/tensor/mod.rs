//! Deterministic reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every differentiable operation the networks need lives here: convolutions
//! (2D and 3D), batch normalization, ReLU, average pooling, global average
//! pooling, a dense layer and weighted softmax cross-entropy, plus small
//! elementwise helpers. Values are 64-bit floats throughout; kernels use a
//! fixed summation order so repeated runs are bit-identical.
//!
//! A [`Tape`] records one forward computation. [`Tensor`] is a cheap handle
//! (tape + node index); tensor payloads are never mutated after creation.
//! Calling [`Tensor::backward`] on a scalar sweeps the tape in reverse and
//! accumulates gradients into every reachable gradient-tracked node, so a
//! second call without a reset doubles the stored gradients.
//!
//! A tape is confined to one thread (`Rc` interior), but independent tapes on
//! distinct threads do not interact. Kernels may parallelize internally over
//! disjoint output partitions, which keeps results independent of thread count.

mod conv;
pub mod gradcheck;
mod ops;
pub mod reference;


use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use ops::{
    add, avg_pool2d, avg_pool3d, batch_norm, concat_channels, conv2d, conv3d, dense,
    global_avg_pool, mul, relu, scale, softmax_cross_entropy, sum, Mode, RunningStats,
};

/// Batch-norm variance floor.
pub const BN_EPSILON: f64 = 1e-5;
/// Retention factor for batch-norm running statistics:
/// `running = momentum * running + (1 - momentum) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;

/// One recorded node: the forward value plus what backward needs.
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: ops::Op,
}

/// A recording of one forward computation, in topological order.
///
/// Nodes are appended as operations execute, so every node's inputs precede
/// it; a single reverse sweep therefore propagates all adjoints.
#[derive(Clone)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: ops::Op) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Tensor {
            tape: self.clone(),
            idx: nodes.len() - 1,
        }
    }

    fn check_shape(shape: &[usize], len: usize) -> Result<()> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != len {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} elements, data has {len}"
            )));
        }
        Ok(())
    }

    /// Record a leaf that does not take gradients (network inputs, constants).
    pub fn leaf(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::check_shape(shape, data.len())?;
        Ok(self.push(shape.to_vec(), data, false, ops::Op::Leaf))
    }

    /// Record a gradient-tracked leaf (a trainable parameter).
    pub fn param(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::check_shape(shape, data.len())?;
        Ok(self.push(shape.to_vec(), data, true, ops::Op::Leaf))
    }
}

/// Handle to one node of a [`Tape`]. Cloning is cheap and aliases the node.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    idx: usize,
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.idx].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.idx].shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.idx].requires_grad
    }

    /// Copy of the forward value (row-major, last index fastest).
    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    /// Copy of the accumulated gradient, if backward has reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.nodes.borrow()[self.idx].grad.clone()
    }

    /// The scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.idx];
        assert_eq!(node.value.len(), 1, "item() on non-scalar tensor");
        node.value[0]
    }

    /// Reverse sweep from this scalar. Adjoints are computed into scratch
    /// buffers and added onto stored gradients at the end, so repeated calls
    /// accumulate.
    pub fn backward(&self) -> Result<()> {
        {
            let nodes = self.tape.nodes.borrow();
            let node = &nodes[self.idx];
            if node.value.len() != 1 {
                return Err(Error::Shape(format!(
                    "backward() needs a scalar loss, got shape {:?}",
                    node.shape
                )));
            }
            if !node.requires_grad {
                return Err(Error::InvalidInput(
                    "backward() on a tensor with no gradient path".into(),
                )); // nothing upstream to differentiate
            }
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.idx + 1];
        adjoints[self.idx] = Some(vec![1.0]);
        {
            let nodes = self.tape.nodes.borrow();
            for i in (0..=self.idx).rev() {
                if adjoints[i].is_none() || !nodes[i].requires_grad {
                    continue;
                }
                ops::propagate(&nodes, i, &mut adjoints);
            }
        }

        let mut nodes = self.tape.nodes.borrow_mut();
        for (i, adj) in adjoints.into_iter().enumerate() {
            let Some(adj) = adj else { continue };
            if !nodes[i].requires_grad {
                continue;
            }
            match &mut nodes[i].grad {
                Some(g) => {
                    for (gi, ai) in g.iter_mut().zip(&adj) {
                        *gi += ai;
                    }
                }
                slot @ None => *slot = Some(adj),
            }
        }
        Ok(())
    }
}
