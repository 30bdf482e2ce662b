use crate::autodiff::{CustomOp, Node, Real};
use crate::error::{Error, Result};
use crate::snn::{DecayConstants, NeuronConfig};

/// How a layer maps its presynaptic membrane trace onto its neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synapse {
    /// `[B,Cin,H,W]` traces, `[Cout,Cin,k,k]` weights.
    Conv { stride: usize, padding: usize },
    /// `[B,N]` traces, `[K,N]` weights.
    Dense,
}

/// Traces of one layer: `p`, `q` follow the presynaptic layout, `r` the
/// postsynaptic one.
#[derive(Debug, Clone)]
pub struct LifState<F: Real> {
    pub p: Node<F>,
    pub q: Node<F>,
    pub r: Node<F>,
}

impl<F: Real> LifState<F> {
    pub fn zeros(pre_shape: &[usize], post_shape: &[usize]) -> Self {
        LifState { p: Node::zeros(pre_shape), q: Node::zeros(pre_shape), r: Node::zeros(post_shape) }
    }
}

/// Everything a layer step needs besides its state.
pub(crate) struct StepCtx<'a> {
    pub config: &'a NeuronConfig,
    pub decay: DecayConstants,
    pub spike: &'a CustomOp,
    pub synapse: Synapse,
}

fn leak<F: Real>(trace: &Node<F>, input: &Node<F>, decay: f64) -> Result<Node<F>> {
    trace.scale(F::of(decay)).add(&input.scale(F::of(1.0 - decay)))
}

pub(crate) fn step<F: Real>(
    state: &LifState<F>,
    presyn: &Node<F>,
    weight: &Node<F>,
    bias: &Node<F>,
    ctx: &StepCtx<'_>,
) -> Result<(LifState<F>, Node<F>, Node<F>)> {
    if presyn.shape() != state.q.shape() {
        return Err(Error::structural(format!(
            "presynaptic spikes {:?} do not match trace shape {:?}",
            presyn.shape(),
            state.q.shape()
        )));
    }
    let drive = match ctx.synapse {
        Synapse::Conv { stride, padding } => state.p.conv2d(weight, bias, stride, padding)?,
        Synapse::Dense => state.p.matmul(&weight.t()?)?.add(bias)?,
    };
    if drive.shape() != state.r.shape() {
        return Err(Error::structural(format!(
            "layer output {:?} does not match refractory trace {:?}",
            drive.shape(),
            state.r.shape()
        )));
    }
    let rho = ctx.config.rho();
    let u = if rho != 0.0 { drive.sub(&state.r.scale(F::of(rho)))? } else { drive };
    let s = ctx.spike.apply(&u.offset(F::of(-ctx.config.u_th)));
    let next = LifState {
        p: leak(&state.p, &state.q, ctx.decay.mem)?,
        q: leak(&state.q, presyn, ctx.decay.syn)?,
        r: leak(&state.r, &s, ctx.decay.rfr)?,
    };
    Ok((next, s, u))
}

/// One timestep of a layer: returns the next state, the spikes and the
/// membrane potential of this step.
pub fn lif_step<F: Real>(
    state: &LifState<F>,
    presyn: &Node<F>,
    weight: &Node<F>,
    bias: &Node<F>,
    synapse: Synapse,
    config: &NeuronConfig,
) -> Result<(LifState<F>, Node<F>, Node<F>)> {
    let decay = crate::snn::decay_constants(config)?;
    let spike = crate::snn::spike_op_for(config);
    step(state, presyn, weight, bias, &StepCtx { config, decay, spike: &spike, synapse })
}
