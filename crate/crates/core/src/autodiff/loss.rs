use std::rc::Rc;

use crate::autodiff::{Node, Real};
use crate::error::{Error, Result};

/// Mean over the batch of `-log softmax(logits)[target]`.
///
/// The row maximum is subtracted as a constant before exponentiation;
/// because log-sum-exp is shift invariant this changes no derivative of
/// any order.
pub fn softmax_cross_entropy<F: Real>(logits: &Node<F>, targets: &[usize]) -> Result<Node<F>> {
    let &[b, k] = logits.shape() else {
        return Err(Error::structural(format!("logits must be [B,K], got {:?}", logits.shape())));
    };
    if targets.len() != b {
        return Err(Error::structural(format!("{} targets for a batch of {b}", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::structural(format!("target {t} out of range for {k} classes")));
    }
    let v = logits.value();
    let row_max: Vec<F> = (0..b)
        .map(|r| v[r * k..(r + 1) * k].iter().fold(F::neg_infinity(), |m, &x| m.max(x)))
        .collect();
    let shift = Node::leaf(crate::autodiff::Tensor::new(vec![b, 1], row_max)?, false);
    let shifted = logits.sub(&shift)?;
    let lse = shifted.exp().sum_axes(&[1])?.ln();
    let picked_idx: Rc<[usize]> = targets.iter().enumerate().map(|(r, &t)| r * k + t).collect();
    let picked = shifted.gather(picked_idx, &[b])?;
    Ok(lse.sub(&picked)?.mean())
}
