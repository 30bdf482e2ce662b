use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, backward_retained, Node, Real, Tensor};
use crate::error::{Error, Result};
use crate::meta::{adam_update, sgd_update, AdamState};

/// Share of the per-step range of proposed update magnitudes used as the
/// gate when no absolute threshold is configured.
pub const RANGE_FRACTION: f64 = 0.05;

/// A differentiable model the meta-learner can adapt.
pub trait Learner<F: Real> {
    type Batch;

    /// Scalar loss of `params` on `batch`.
    fn loss(&self, params: &[Node<F>], batch: &Self::Batch) -> Result<Node<F>>;

    /// Layer name owning each parameter tensor, used for freezing and
    /// statistics.
    fn groups(&self) -> Vec<String>;
}

/// Support set for adaptation, query set for the outer objective.
#[derive(Debug, Clone)]
pub struct Task<B> {
    pub support: B,
    pub query: B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    #[serde(alias = "maml")]
    SecondOrder,
    #[serde(alias = "fomaml")]
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaHyper {
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub outer_lr: f64,
    pub tasks_per_meta_batch: usize,
    pub mode: MetaMode,
    /// Absolute gate for thresholded adaptation; `None` derives it per step
    /// from the range of proposed magnitudes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update_threshold: Option<f64>,
    /// Layers left untouched by inner adaptation.
    pub freeze_set: Vec<String>,
}

impl Default for MetaHyper {
    fn default() -> Self {
        MetaHyper {
            inner_lr: 0.1,
            inner_steps: 1,
            outer_lr: 1e-3,
            tasks_per_meta_batch: 8,
            mode: MetaMode::SecondOrder,
            update_threshold: None,
            freeze_set: Vec::new(),
        }
    }
}

impl MetaHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return Err(Error::config(format!("inner_lr must be positive, got {}", self.inner_lr)));
        }
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return Err(Error::config(format!("outer_lr must be positive, got {}", self.outer_lr)));
        }
        if self.tasks_per_meta_batch == 0 {
            return Err(Error::config("tasks_per_meta_batch must be at least 1"));
        }
        if let Some(t) = self.update_threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::config(format!("update_threshold must be non-negative, got {t}")));
            }
        }
        Ok(())
    }
}

fn check_finite<F: Real>(loss: &Node<F>, what: &str) -> Result<()> {
    if loss.item().is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} loss is {}", loss.item())))
    }
}

fn frozen_mask(groups: &[String], n: usize, freeze: &[String]) -> Result<Vec<bool>> {
    if groups.len() != n {
        return Err(Error::structural(format!("learner reports {} groups for {n} parameters", groups.len())));
    }
    Ok(groups.iter().map(|g| freeze.contains(g)).collect())
}

/// Gradients of the support loss for the trainable entries of `theta`.
fn support_grads<F: Real, L: Learner<F>>(
    learner: &L,
    theta: &[Node<F>],
    frozen: &[bool],
    support: &L::Batch,
    record: bool,
) -> Result<Vec<Option<Node<F>>>> {
    let loss = learner.loss(theta, support)?;
    check_finite(&loss, "support")?;
    let trainable: Vec<Node<F>> = theta.iter().zip(frozen).filter(|(_, f)| !**f).map(|(p, _)| p.clone()).collect();
    let mut grads = backward_retained(&loss, &trainable, record)?.into_vec().into_iter();
    Ok(frozen.iter().map(|f| if *f { None } else { grads.next() }).collect())
}

fn gated_step<F: Real>(
    theta: &[Node<F>],
    grads: &[Option<Node<F>>],
    lr: f64,
    gate: Option<Option<f64>>,
) -> Result<(Vec<Node<F>>, Option<f64>)> {
    let threshold = match gate {
        None => None,
        Some(Some(abs)) => Some(abs),
        Some(None) => {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for g in grads.iter().flatten() {
                for &v in g.value() {
                    let m = (lr * v.f64()).abs();
                    lo = lo.min(m);
                    hi = hi.max(m);
                }
            }
            Some(if lo.is_finite() { RANGE_FRACTION * (hi - lo) } else { 0.0 })
        }
    };
    let stepped = theta
        .iter()
        .zip(grads)
        .map(|(p, g)| {
            let Some(g) = g else { return Ok(p.clone()) };
            let g = match threshold {
                None => g.clone(),
                Some(th) => {
                    let mask: Vec<F> = g
                        .value()
                        .iter()
                        .map(|&v| if (lr * v.f64()).abs() >= th { F::one() } else { F::zero() })
                        .collect();
                    g.mul(&Node::constant(Tensor::new(g.shape().to_vec(), mask)?))?
                }
            };
            Ok(sgd_update(std::slice::from_ref(p), &[g], lr)?.remove(0))
        })
        .collect::<Result<_>>()?;
    Ok((stepped, threshold))
}

fn adapt<F: Real, L: Learner<F>>(
    learner: &L,
    theta0: &[Node<F>],
    support: &L::Batch,
    hyper: &MetaHyper,
    record_second_order: bool,
    gate: Option<Option<f64>>,
) -> Result<(Vec<Node<F>>, Vec<f64>)> {
    let frozen = frozen_mask(&learner.groups(), theta0.len(), &hyper.freeze_set)?;
    let mut theta = theta0.to_vec();
    let mut gates = Vec::new();
    for _ in 0..hyper.inner_steps {
        if frozen.iter().all(|f| *f) {
            break;
        }
        let grads = support_grads(learner, &theta, &frozen, support, record_second_order)?;
        let (next, th) = gated_step(&theta, &grads, hyper.inner_lr, gate)?;
        theta = next;
        gates.extend(th);
    }
    Ok((theta, gates))
}

/// `inner_steps` SGD steps on the support loss, skipping frozen layers.
/// With `record_second_order` the result is differentiable through the
/// inner gradients; otherwise those gradients enter as constants.
pub fn inner_adapt<F: Real, L: Learner<F>>(
    learner: &L,
    theta0: &[Node<F>],
    support: &L::Batch,
    hyper: &MetaHyper,
    record_second_order: bool,
) -> Result<Vec<Node<F>>> {
    Ok(adapt(learner, theta0, support, hyper, record_second_order, None)?.0)
}

/// Like [`inner_adapt`], but a parameter only moves when its proposed
/// update `|lr * g|` reaches the gate: `hyper.update_threshold`, or
/// [`RANGE_FRACTION`] of the range of all proposed magnitudes of the step.
/// Also returns the gate used at each step.
pub fn thresholded_inner_adapt<F: Real, L: Learner<F>>(
    learner: &L,
    theta0: &[Node<F>],
    support: &L::Batch,
    hyper: &MetaHyper,
    record_second_order: bool,
) -> Result<(Vec<Node<F>>, Vec<f64>)> {
    adapt(learner, theta0, support, hyper, record_second_order, Some(hyper.update_threshold))
}

/// Sum over tasks of the query loss after adapting on the support set.
pub fn outer_loss<F: Real, L: Learner<F>>(
    learner: &L,
    theta0: &[Node<F>],
    tasks: &[Task<L::Batch>],
    hyper: &MetaHyper,
) -> Result<Node<F>> {
    if tasks.is_empty() {
        return Err(Error::structural("outer loss over an empty task batch"));
    }
    let record = hyper.mode == MetaMode::SecondOrder;
    let mut total: Option<Node<F>> = None;
    for task in tasks {
        let adapted = inner_adapt(learner, theta0, &task.support, hyper, record)?;
        let q = learner.loss(&adapted, &task.query)?;
        total = Some(match total {
            Some(t) => t.add(&q)?,
            None => q,
        });
    }
    Ok(total.expect("non-empty"))
}

/// Value of the outer loss and its gradient with respect to `theta0`.
/// Tasks are processed one at a time and their gradients summed in order.
pub fn meta_gradient<F: Real, L: Learner<F>>(
    learner: &L,
    theta0: &[Tensor<F>],
    tasks: &[Task<L::Batch>],
    hyper: &MetaHyper,
) -> Result<(f64, Vec<Tensor<F>>)> {
    if tasks.is_empty() {
        return Err(Error::structural("meta-gradient over an empty task batch"));
    }
    let record = hyper.mode == MetaMode::SecondOrder;
    let leaves: Vec<Node<F>> = theta0.iter().map(|t| Node::leaf(t.clone(), true)).collect();
    let mut acc: Vec<Tensor<F>> = theta0.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut total = 0.0;
    for task in tasks {
        let adapted = inner_adapt(learner, &leaves, &task.support, hyper, record)?;
        let q = learner.loss(&adapted, &task.query)?;
        check_finite(&q, "query")?;
        total += q.item().f64();
        drop(adapted);
        let grads = backward(&q, &leaves, false)?;
        for (a, g) in acc.iter_mut().zip(grads.iter()) {
            for (x, y) in a.data_mut().iter_mut().zip(g.value()) {
                *x += *y;
            }
        }
    }
    Ok((total, acc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaStepReport {
    pub outer_loss: f64,
    pub grad_norm: f64,
}

/// One outer update of `theta0` with ADAM.
pub fn meta_step<F: Real, L: Learner<F>>(
    learner: &L,
    theta0: &mut [Tensor<F>],
    tasks: &[Task<L::Batch>],
    hyper: &MetaHyper,
    adam: &mut AdamState,
) -> Result<MetaStepReport> {
    let (outer, grads) = meta_gradient(learner, theta0, tasks, hyper)?;
    let grad_norm = grads.iter().flat_map(|g| g.data()).map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::Numerical(format!("meta-gradient norm is {grad_norm}")));
    }
    adam_update(theta0, &grads, adam, hyper.outer_lr)?;
    Ok(MetaStepReport { outer_loss: outer, grad_norm })
}
