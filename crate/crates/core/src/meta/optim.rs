use crate::autodiff::{Node, Real, Tensor};
use crate::error::{Error, Result};

pub const ADAM_B1: f64 = 0.9;
pub const ADAM_B2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `theta - lr * g`, recorded so that it stays differentiable in `theta`
/// and, if they carry lineage, in the gradients.
pub fn sgd_update<F: Real>(params: &[Node<F>], grads: &[Node<F>], lr: f64) -> Result<Vec<Node<F>>> {
    if params.len() != grads.len() {
        return Err(Error::structural(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| {
            if p.shape() != g.shape() {
                return Err(Error::structural(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            p.sub(&g.scale(F::of(lr)))
        })
        .collect()
}

/// First and second moments per parameter tensor, kept in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<F: Real>(params: &[Tensor<F>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected ADAM step in place.
pub fn adam_update<F: Real>(params: &mut [Tensor<F>], grads: &[Tensor<F>], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::structural("ADAM parameter, gradient and state counts differ"));
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::structural(format!("ADAM shape mismatch at parameter {:?}", p.shape())));
        }
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_B1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_B2.powi(state.t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let gi = gi.f64();
            *mi = ADAM_B1 * *mi + (1.0 - ADAM_B1) * gi;
            *vi = ADAM_B2 * *vi + (1.0 - ADAM_B2) * gi * gi;
            let step = lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
            *pi = F::of(pi.f64() - step);
        }
    }
    Ok(())
}
