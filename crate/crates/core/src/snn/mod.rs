//! Leaky integrate-and-fire network with a fast-sigmoid surrogate gradient.
//!
//! Per layer and timestep the dynamics are
//!
//! ```text
//! u = W p - rho r + b          s = step(u - u_th)
//! p <- a p + (1 - a) q         q <- b q + (1 - b) s_pre
//! r <- g r + (1 - g) s
//! ```
//!
//! where `W p` is the layer's convolution or dense product and
//! `a, b, g = exp(-dt / tau)` for the membrane, synaptic and refractory
//! time constants. The step has the exact forward value; its derivative is
//! replaced by `1 / (beta |x| + 1)^2`.

mod config;
mod lif;
mod network;
mod readout;
mod surrogate;
mod three_factor;

pub use config::{decay_constants, DecayConstants, NeuronConfig, SpikeForward};
pub use lif::{lif_step, LifState, Synapse};
pub use network::{
    build_network, layer_shapes, readout_spec, snn_features, snn_forward, window_split, InputGeometry, LabeledBatch, LayerParams, LayerShape,
    LayerSpec, NetworkSpec, ParamSet,
};
pub use readout::{readout_and_loss, Readout};
pub use surrogate::{smooth_spike_op, spike_op, spike_op_for, surrogate_derivative, surrogate_second_derivative, surrogate_spike};
pub use three_factor::three_factor_grad;
