use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neuron constants. Times are in milliseconds; `u_th` and `rho` in
/// membrane units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronConfig {
    pub dt: f64,
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub tau_rfr: f64,
    pub u_th: f64,
    /// Refractory coupling; `None` means "equal to `u_th`".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub surrogate_beta: f64,
    #[serde(skip_serializing_if = "SpikeForward::is_step")]
    pub spike_forward: SpikeForward,
}

/// Forward value of the spike nonlinearity. Backward always uses the
/// fast-sigmoid surrogate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeForward {
    /// Binary spikes.
    #[default]
    Step,
    /// `x / (beta |x| + 1)`, whose exact derivative is the surrogate. Makes
    /// the network smooth so autodiff can be checked against finite
    /// differences.
    Smooth,
}

impl SpikeForward {
    fn is_step(&self) -> bool {
        *self == SpikeForward::Step
    }
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            dt: 1.0,
            tau_mem: 20.0,
            tau_syn: 10.0,
            tau_rfr: 10.0,
            u_th: 1.0,
            rho: None,
            surrogate_beta: 10.0,
            spike_forward: SpikeForward::Step,
        }
    }
}

impl NeuronConfig {
    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(self.u_th)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("neuron dt must be positive and finite, got {}", self.dt)));
        }
        for (name, tau) in [("tau_mem", self.tau_mem), ("tau_syn", self.tau_syn), ("tau_rfr", self.tau_rfr)] {
            if !(tau > self.dt) {
                return Err(Error::config(format!("{name} = {tau} must exceed dt = {}", self.dt)));
            }
        }
        if !(self.u_th > 0.0 && self.u_th.is_finite()) {
            return Err(Error::config(format!("u_th must be positive, got {}", self.u_th)));
        }
        if !(self.rho() >= 0.0 && self.rho().is_finite()) {
            return Err(Error::config(format!("rho must be non-negative, got {}", self.rho())));
        }
        if !(self.surrogate_beta > 0.0 && self.surrogate_beta.is_finite()) {
            return Err(Error::config(format!("surrogate_beta must be positive, got {}", self.surrogate_beta)));
        }
        Ok(())
    }
}

/// Per-step decay factors of the membrane (`p`), synaptic (`q`) and
/// refractory (`r`) traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConstants {
    pub mem: f64,
    pub syn: f64,
    pub rfr: f64,
}

pub fn decay_constants(config: &NeuronConfig) -> Result<DecayConstants> {
    config.validate()?;
    Ok(DecayConstants {
        mem: (-config.dt / config.tau_mem).exp(),
        syn: (-config.dt / config.tau_syn).exp(),
        rfr: (-config.dt / config.tau_rfr).exp(),
    })
}
