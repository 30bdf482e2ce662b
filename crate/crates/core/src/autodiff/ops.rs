//! Forward definitions of the primitive operations.

use std::rc::Rc;

use crate::autodiff::kernels;
use crate::autodiff::node::Op;
use crate::autodiff::tensor::{broadcast_shape, numel};
use crate::autodiff::{Node, Real, ReduceKind};
use crate::error::{Error, Result};

/// Elementwise operation kinds for [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise<F> {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Abs,
    Exp,
    Ln,
    Sign,
    Scale(F),
    ClampMin(F),
}

/// Dispatches one elementwise op; binary kinds require `b`.
pub fn elementwise<F: Real>(kind: Elementwise<F>, a: &Node<F>, b: Option<&Node<F>>) -> Result<Node<F>> {
    let rhs = || b.ok_or_else(|| Error::structural(format!("{kind:?} needs two operands")));
    match kind {
        Elementwise::Add => a.add(rhs()?),
        Elementwise::Sub => a.sub(rhs()?),
        Elementwise::Mul => a.mul(rhs()?),
        Elementwise::Div => a.div(rhs()?),
        Elementwise::Neg => Ok(a.neg()),
        Elementwise::Abs => Ok(a.abs()),
        Elementwise::Exp => Ok(a.exp()),
        Elementwise::Ln => Ok(a.ln()),
        Elementwise::Sign => Ok(a.sign()),
        Elementwise::Scale(c) => Ok(a.scale(c)),
        Elementwise::ClampMin(c) => Ok(a.clamp_min(c)),
    }
}

pub(crate) fn sign_of<F: Real>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

fn check_axes(shape: &[usize], axes: &[usize]) -> Result<()> {
    for (i, &a) in axes.iter().enumerate() {
        if a >= shape.len() || axes[..i].contains(&a) {
            return Err(Error::structural(format!("invalid axes {axes:?} for shape {shape:?}")));
        }
    }
    Ok(())
}

impl<F: Real> Node<F> {
    fn unary(&self, f: impl Fn(F) -> F, op: Op<F>) -> Node<F> {
        let v = self.value().iter().map(|&x| f(x)).collect();
        Node::from_op(self.shape().to_vec(), v, op)
    }

    fn aligned(&self, other: &Node<F>) -> Result<(Node<F>, Node<F>)> {
        if self.shape() == other.shape() {
            return Ok((self.clone(), other.clone()));
        }
        let shape = broadcast_shape(self.shape(), other.shape())?;
        let a = if self.shape() == shape.as_slice() { self.clone() } else { self.broadcast_to(&shape)? };
        let b = if other.shape() == shape.as_slice() { other.clone() } else { other.broadcast_to(&shape)? };
        Ok((a, b))
    }

    fn binary(&self, other: &Node<F>, f: impl Fn(F, F) -> F, op: fn(Node<F>, Node<F>) -> Op<F>) -> Result<Node<F>> {
        let (a, b) = self.aligned(other)?;
        let v = a.value().iter().zip(b.value()).map(|(&x, &y)| f(x, y)).collect();
        let shape = a.shape().to_vec();
        Ok(Node::from_op(shape, v, op(a, b)))
    }

    pub fn add(&self, other: &Node<F>) -> Result<Node<F>> {
        self.binary(other, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: &Node<F>) -> Result<Node<F>> {
        self.binary(other, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: &Node<F>) -> Result<Node<F>> {
        self.binary(other, |x, y| x * y, Op::Mul)
    }

    /// No special case for zero divisors; non-finite values propagate.
    pub fn div(&self, other: &Node<F>) -> Result<Node<F>> {
        self.binary(other, |x, y| x / y, Op::Div)
    }

    pub fn neg(&self) -> Node<F> {
        self.unary(|x| -x, Op::Neg(self.clone()))
    }

    pub fn abs(&self) -> Node<F> {
        self.unary(|x| x.abs(), Op::Abs(self.clone()))
    }

    pub fn exp(&self) -> Node<F> {
        self.unary(|x| x.exp(), Op::Exp(self.clone()))
    }

    pub fn ln(&self) -> Node<F> {
        self.unary(|x| x.ln(), Op::Ln(self.clone()))
    }

    /// Sign with `sign(0) = 0`; its derivative is zero everywhere.
    pub fn sign(&self) -> Node<F> {
        self.unary(sign_of, Op::Sign(self.clone()))
    }

    pub fn scale(&self, c: F) -> Node<F> {
        self.unary(|x| x * c, Op::Scale(self.clone(), c))
    }

    /// Adds a scalar constant.
    pub fn offset(&self, c: F) -> Node<F> {
        self.unary(|x| x + c, Op::Offset(self.clone(), c))
    }

    pub fn clamp_min(&self, c: F) -> Node<F> {
        self.unary(|x| x.max(c), Op::ClampMin(self.clone(), c))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Node<F>> {
        if broadcast_shape(self.shape(), shape)? != shape {
            return Err(Error::structural(format!("cannot broadcast {:?} to {shape:?}", self.shape())));
        }
        let v = kernels::broadcast(self.value(), self.shape(), shape);
        Ok(Node::from_op(shape.to_vec(), v, Op::BroadcastTo(self.clone())))
    }

    /// Sums over broadcast axes so the result has `shape`; the adjoint of
    /// [`broadcast_to`](Self::broadcast_to).
    pub fn sum_to(&self, shape: &[usize]) -> Result<Node<F>> {
        if broadcast_shape(shape, self.shape())? != self.shape() {
            return Err(Error::structural(format!("cannot sum {:?} to {shape:?}", self.shape())));
        }
        let v = kernels::sum_to(self.value(), self.shape(), shape);
        Ok(Node::from_op(shape.to_vec(), v, Op::SumTo(self.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Node<F>> {
        if numel(shape) != self.numel() {
            return Err(Error::structural(format!("cannot reshape {:?} into {shape:?}", self.shape())));
        }
        if shape == self.shape() {
            return Ok(self.clone());
        }
        Ok(Node::from_op(shape.to_vec(), self.value().to_vec(), Op::Reshape(self.clone())))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Node<F>> {
        let nd = self.shape().len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::structural(format!("{perm:?} is not a permutation of {nd} axes")));
        }
        let (shape, v) = kernels::permute(self.value(), self.shape(), perm);
        Ok(Node::from_op(shape, v, Op::Permute(self.clone(), perm.into())))
    }

    /// Transpose of a matrix.
    pub fn t(&self) -> Result<Node<F>> {
        self.permute(&[1, 0])
    }

    pub fn matmul(&self, other: &Node<F>) -> Result<Node<F>> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(Error::structural(format!(
                "matmul needs matrices, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        };
        if k != k2 {
            return Err(Error::structural(format!("matmul inner dimensions {k} and {k2} differ")));
        }
        let v = kernels::matmul(self.value(), other.value(), m, k, n);
        Ok(Node::from_op(vec![m, n], v, Op::MatMul(self.clone(), other.clone())))
    }

    /// `out[j] = self[indices[j]]` over flat indices.
    pub fn gather(&self, indices: Rc<[usize]>, out_shape: &[usize]) -> Result<Node<F>> {
        if indices.len() != numel(out_shape) {
            return Err(Error::structural(format!(
                "gather of {} indices cannot fill {out_shape:?}",
                indices.len()
            )));
        }
        let src = self.value();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(Error::structural(format!("gather index {bad} out of range {}", src.len())));
        }
        let v = indices.iter().map(|&i| src[i]).collect();
        Ok(Node::from_op(out_shape.to_vec(), v, Op::Gather(self.clone(), indices)))
    }

    /// `out[indices[j]] += self[j]` into zeros of `out_shape`; the adjoint of
    /// [`gather`](Self::gather).
    pub fn scatter_add(&self, indices: Rc<[usize]>, out_shape: &[usize]) -> Result<Node<F>> {
        let n = numel(out_shape);
        if indices.len() != self.numel() {
            return Err(Error::structural("scatter_add needs one index per element"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::structural(format!("scatter index {bad} out of range {n}")));
        }
        let mut v = vec![F::zero(); n];
        for (&i, &x) in indices.iter().zip(self.value()) {
            v[i] += x;
        }
        Ok(Node::from_op(out_shape.to_vec(), v, Op::ScatterAdd(self.clone(), indices)))
    }

    /// `self[i]` along the leading axis.
    pub fn index0(&self, i: usize) -> Result<Node<F>> {
        let (&n, rest) = self
            .shape()
            .split_first()
            .ok_or_else(|| Error::structural("index0 on a scalar"))?;
        if i >= n {
            return Err(Error::structural(format!("index {i} out of range for axis of {n}")));
        }
        let m = numel(rest);
        let idx: Rc<[usize]> = (i * m..(i + 1) * m).collect();
        let rest = rest.to_vec();
        self.gather(idx, &rest)
    }

    pub fn reduce(&self, kind: ReduceKind, axes: &[usize]) -> Result<Node<F>> {
        check_axes(self.shape(), axes)?;
        let reduced: Vec<usize> = self
            .shape()
            .iter()
            .enumerate()
            .filter(|(d, _)| !axes.contains(d))
            .map(|(_, &n)| n)
            .collect();
        match kind {
            ReduceKind::Sum => {
                let kept: Vec<usize> = self
                    .shape()
                    .iter()
                    .enumerate()
                    .map(|(d, &n)| if axes.contains(&d) { 1 } else { n })
                    .collect();
                self.sum_to(&kept)?.reshape(&reduced)
            }
            ReduceKind::Mean => {
                let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
                Ok(self.reduce(ReduceKind::Sum, axes)?.scale(F::one() / F::of(count as f64)))
            }
            ReduceKind::Max => {
                if axes.iter().any(|&a| self.shape()[a] == 0) {
                    return Err(Error::structural("max over an empty axis"));
                }
                let (_, idx) = kernels::argmax_axes(self.value(), self.shape(), axes);
                self.gather(idx.into(), &reduced)
            }
        }
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Node<F>> {
        self.reduce(ReduceKind::Sum, axes)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Node<F>> {
        self.reduce(ReduceKind::Mean, axes)
    }

    pub fn max_axes(&self, axes: &[usize]) -> Result<Node<F>> {
        self.reduce(ReduceKind::Max, axes)
    }

    pub fn sum(&self) -> Node<F> {
        let all: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceKind::Sum, &all).expect("all axes are valid")
    }

    pub fn mean(&self) -> Node<F> {
        let all: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceKind::Mean, &all).expect("all axes are valid")
    }
}

/// Stacks equally shaped nodes along a new leading axis.
pub fn stack<F: Real>(nodes: &[Node<F>]) -> Result<Node<F>> {
    let first = nodes.first().ok_or_else(|| Error::structural("stack of nothing"))?;
    let mut v = Vec::with_capacity(first.numel() * nodes.len());
    for n in nodes {
        if n.shape() != first.shape() {
            return Err(Error::structural(format!(
                "stack shape mismatch {:?} vs {:?}",
                n.shape(),
                first.shape()
            )));
        }
        v.extend_from_slice(n.value());
    }
    let mut shape = vec![nodes.len()];
    shape.extend_from_slice(first.shape());
    Ok(Node::from_op(shape, v, Op::Stack(nodes.to_vec())))
}
