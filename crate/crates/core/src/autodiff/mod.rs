//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during the
//! forward pass. [`Tape::backward`] walks the record in reverse and
//! accumulates gradients into every leaf created with `requires_grad`.
//! Gradients accumulate across repeated backward calls until
//! [`Tape::reset_grad`] is called.
//!
//! Storage is `f32`; reductions (matrix products, sums, softmax
//! normalizers) accumulate in `f64`.

mod gradcheck;
mod ops;

pub use gradcheck::{gradient_check, gradient_check_multi};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::cell::{Ref, RefCell};
use std::rc::Rc;

/// Shared index array (edge endpoints, segment ids) referenced by graph ops.
pub type Index = Rc<[usize]>;

/// Clamp applied inside every logarithm.
pub const LOG_EPS: f32 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    MulScalar(usize, usize),
    Exp(usize),
    Log(usize),
    LeakyRelu(usize, f32),
    Elu(usize),
    Sigmoid(usize),
    Abs(usize),
    Powi(usize, i32),
    Sqrt(usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    GatherRows(usize, Index),
    ScatterAddRows(usize, Index),
    SegmentSoftmax(usize, Index),
    SegmentMaxRows(usize, Rc<[usize]>),
    RowScale(usize, usize),
    RowDot(usize, usize),
    LogSoftmaxRows(usize),
    BceWithLogits(usize, Rc<Tensor>),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b)
            | Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | AddRow(a, b)
            | MulScalar(a, b)
            | ConcatCols(a, b)
            | RowScale(a, b)
            | RowDot(a, b) => vec![*a, *b],
            Scale(a, _)
            | AddScalar(a)
            | Exp(a)
            | Log(a)
            | LeakyRelu(a, _)
            | Elu(a)
            | Sigmoid(a)
            | Abs(a)
            | Powi(a, _)
            | Sqrt(a)
            | SliceCols(a, _)
            | SliceRows(a, _)
            | Reshape(a)
            | Sum(a)
            | Mean(a)
            | RowSum(a)
            | GatherRows(a, _)
            | ScatterAddRows(a, _)
            | SegmentSoftmax(a, _)
            | SegmentMaxRows(a, _)
            | LogSoftmaxRows(a)
            | BceWithLogits(a, _) => vec![*a],
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f32>>,
}

/// Operation record for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Records a leaf. Only leaves created with `requires_grad` receive gradients.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded operation. Outstanding `Var`s must not be used afterwards.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    /// Zeroes accumulated leaf gradients.
    pub fn reset_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Accumulated gradient of a leaf, `None` if it never received one.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var { tape: self, id }
    }

    fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    /// Back-propagates from a scalar `loss` into every `requires_grad` leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        if !nodes[loss.id].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = nodes[id].op {
                let node = &mut nodes[id];
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            ops::backward_step(&nodes, id, &g, &mut grads);
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Borrow of the forward value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f32 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    /// Copy of the value as a new constant leaf (stop-gradient).
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.to_tensor())
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }
}

pub(crate) fn accumulate(grads: &mut [Option<Vec<f32>>], id: usize, contribution: Vec<f32>) {
    match grads[id].as_mut() {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        None => grads[id] = Some(contribution),
    }
}
