use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::conv::ConvGeom;
use crate::autodiff::custom::CustomOp;
use crate::autodiff::tensor::numel;
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

pub type NodeId = u64;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static NO_GRAD_DEPTH: Cell<u32> = const { Cell::new(0) };
    static LIVE_RECORDED: Cell<usize> = const { Cell::new(0) };
    static PEAK_RECORDED: Cell<usize> = const { Cell::new(0) };
}

/// Disables lineage recording on this thread until dropped.
pub struct NoGradGuard {
    _not_send: std::marker::PhantomData<*const ()>,
}

pub fn no_grad() -> NoGradGuard {
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    NoGradGuard { _not_send: std::marker::PhantomData }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
    }
}

pub fn is_recording() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

/// Count of nodes on this thread that currently hold lineage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordedStats {
    pub live: usize,
    pub peak: usize,
}

pub fn recorded_stats() -> RecordedStats {
    RecordedStats { live: LIVE_RECORDED.with(Cell::get), peak: PEAK_RECORDED.with(Cell::get) }
}

/// Resets the peak counter to the current live count.
pub fn reset_peak() {
    let live = LIVE_RECORDED.with(Cell::get);
    PEAK_RECORDED.with(|p| p.set(live));
}

fn note_recorded() {
    let live = LIVE_RECORDED.with(|l| {
        l.set(l.get() + 1);
        l.get()
    });
    PEAK_RECORDED.with(|p| p.set(p.get().max(live)));
}

pub(crate) fn note_released() {
    LIVE_RECORDED.with(|l| l.set(l.get().saturating_sub(1)));
}

/// The recorded operation that produced a node, holding its parents.
pub(crate) enum Op<F: Real> {
    Add(Node<F>, Node<F>),
    Sub(Node<F>, Node<F>),
    Mul(Node<F>, Node<F>),
    Div(Node<F>, Node<F>),
    Neg(Node<F>),
    Abs(Node<F>),
    Exp(Node<F>),
    Ln(Node<F>),
    Sign(Node<F>),
    Scale(Node<F>, F),
    Offset(Node<F>, F),
    ClampMin(Node<F>, F),
    BroadcastTo(Node<F>),
    SumTo(Node<F>),
    Reshape(Node<F>),
    Permute(Node<F>, Rc<[usize]>),
    MatMul(Node<F>, Node<F>),
    Im2Col(Node<F>, ConvGeom),
    Col2Im(Node<F>, ConvGeom),
    Gather(Node<F>, Rc<[usize]>),
    ScatterAdd(Node<F>, Rc<[usize]>),
    Stack(Vec<Node<F>>),
    /// Elementwise custom op evaluated at derivative order 0, 1 or 2.
    Custom(Node<F>, CustomOp, u8),
}

impl<F: Real> Op<F> {
    pub(crate) fn parents(&self) -> Vec<&Node<F>> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![a, b],
            Neg(a) | Abs(a) | Exp(a) | Ln(a) | Sign(a) | Scale(a, _) | Offset(a, _)
            | ClampMin(a, _) | BroadcastTo(a) | SumTo(a) | Reshape(a) | Permute(a, _)
            | Im2Col(a, _) | Col2Im(a, _) | Gather(a, _) | ScatterAdd(a, _)
            | Custom(a, _, _) => vec![a],
            Stack(v) => v.iter().collect(),
        }
    }

    fn into_parents(self) -> Vec<Node<F>> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![a, b],
            Neg(a) | Abs(a) | Exp(a) | Ln(a) | Sign(a) | Scale(a, _) | Offset(a, _)
            | ClampMin(a, _) | BroadcastTo(a) | SumTo(a) | Reshape(a) | Permute(a, _)
            | Im2Col(a, _) | Col2Im(a, _) | Gather(a, _) | ScatterAdd(a, _)
            | Custom(a, _, _) => vec![a],
            Stack(v) => v,
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Neg(..) => "neg",
            Abs(..) => "abs",
            Exp(..) => "exp",
            Ln(..) => "ln",
            Sign(..) => "sign",
            Scale(..) => "scale",
            Offset(..) => "offset",
            ClampMin(..) => "clamp_min",
            BroadcastTo(..) => "broadcast_to",
            SumTo(..) => "sum_to",
            Reshape(..) => "reshape",
            Permute(..) => "permute",
            MatMul(..) => "matmul",
            Im2Col(..) => "im2col",
            Col2Im(..) => "col2im",
            Gather(..) => "gather",
            ScatterAdd(..) => "scatter_add",
            Stack(..) => "stack",
            Custom(..) => "custom",
        }
    }
}

pub(crate) struct NodeInner<F: Real> {
    id: NodeId,
    shape: Vec<usize>,
    value: Vec<F>,
    requires_grad: bool,
    op: RefCell<Option<Op<F>>>,
}

impl<F: Real> Drop for NodeInner<F> {
    // Long chains (hundreds of timesteps) would overflow the stack with the
    // default recursive drop.
    fn drop(&mut self) {
        let Some(op) = self.op.get_mut().take() else { return };
        note_released();
        let mut stack = op.into_parents();
        while let Some(node) = stack.pop() {
            if let Ok(mut inner) = Rc::try_unwrap(node.0) {
                if let Some(op) = inner.op.get_mut().take() {
                    note_released();
                    stack.extend(op.into_parents());
                }
            }
        }
    }
}

/// An n-dimensional array participating in a differentiation graph.
pub struct Node<F: Real>(pub(crate) Rc<NodeInner<F>>);

impl<F: Real> Clone for Node<F> {
    fn clone(&self) -> Self {
        Node(Rc::clone(&self.0))
    }
}

impl<F: Real> fmt::Debug for Node<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.op.borrow();
        f.debug_struct("Node")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("op", &op.as_ref().map(Op::name))
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

/// Builds a leaf node, checking that `values` fills `shape`.
pub fn make_node<F: Real>(shape: &[usize], values: Vec<F>, requires_grad: bool) -> Result<Node<F>> {
    if numel(shape) != values.len() {
        return Err(Error::structural(format!(
            "shape {shape:?} needs {} values, got {}",
            numel(shape),
            values.len()
        )));
    }
    Ok(Node::raw(shape.to_vec(), values, requires_grad, None))
}

impl<F: Real> Node<F> {
    fn raw(shape: Vec<usize>, value: Vec<F>, requires_grad: bool, op: Option<Op<F>>) -> Self {
        if op.is_some() {
            note_recorded();
        }
        Node(Rc::new(NodeInner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            value,
            requires_grad,
            op: RefCell::new(op),
        }))
    }

    /// Result of an operation: keeps the lineage only while recording and
    /// when some parent needs a gradient.
    pub(crate) fn from_op(shape: Vec<usize>, value: Vec<F>, op: Op<F>) -> Self {
        debug_assert_eq!(numel(&shape), value.len(), "{} produced a bad shape", op.name());
        let track = is_recording() && op.parents().iter().any(|p| p.requires_grad());
        if track {
            Node::raw(shape, value, true, Some(op))
        } else {
            Node::raw(shape, value, false, None)
        }
    }

    pub fn leaf(t: Tensor<F>, requires_grad: bool) -> Self {
        let (shape, data) = t.into_parts();
        Node::raw(shape, data, requires_grad, None)
    }

    pub fn constant(t: Tensor<F>) -> Self {
        Node::leaf(t, false)
    }

    pub fn scalar(v: F) -> Self {
        Node::raw(Vec::new(), vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Node::raw(shape.to_vec(), vec![F::zero(); numel(shape)], false, None)
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        Node::raw(shape.to_vec(), vec![v; numel(shape)], false, None)
    }

    pub fn id(&self) -> NodeId {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn value(&self) -> &[F] {
        &self.0.value
    }

    pub fn numel(&self) -> usize {
        self.0.value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True when the node carries lineage (was produced while recording).
    pub fn has_lineage(&self) -> bool {
        self.0.op.borrow().is_some()
    }

    pub fn item(&self) -> F {
        self.0.value[0]
    }

    pub fn to_tensor(&self) -> Tensor<F> {
        Tensor::new(self.0.shape.clone(), self.0.value.clone()).expect("node shape is consistent")
    }

    /// Same values, no lineage.
    pub fn detach(&self) -> Self {
        Node::raw(self.0.shape.clone(), self.0.value.clone(), false, None)
    }

    pub fn ptr_eq(&self, other: &Node<F>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn op(&self) -> std::cell::Ref<'_, Option<Op<F>>> {
        self.0.op.borrow()
    }

    /// Drops the lineage of this node, returning whether it had any.
    pub(crate) fn release(&self) -> bool {
        let had = self.0.op.borrow_mut().take();
        match had {
            Some(op) => {
                note_released();
                drop(op);
                true
            }
            None => false,
        }
    }
}
