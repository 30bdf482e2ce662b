//! Meta-training spiking neural networks with second-order MAML.
//!
//! The crate is split into five layers that build on each other:
//!
//! * [`autodiff`]: a reverse-mode differentiation engine over dense arrays
//!   that can differentiate through its own gradients.
//! * [`snn`]: leaky integrate-and-fire dynamics with a fast-sigmoid surrogate
//!   gradient, the convolutional network and its max-membrane readout.
//! * [`meta`]: inner SGD adaptation, the outer MAML / first-order objective,
//!   ADAM, gated (thresholded) updates and update-magnitude statistics.
//! * [`eventdata`]: DVS event streams, the `EVS1` file format, stream
//!   composition, rasterization, meta-splits and episode sampling.
//! * [`harness`]: run configuration, checkpoints, metrics and the experiment
//!   suite driven by the `spikemeta` command line tool.

pub mod autodiff;
pub mod error;
pub mod eventdata;
pub mod harness;
pub mod meta;
pub mod snn;
mod rng;

pub use autodiff::{GradMap, Node, Real, Tensor};
pub use error::{Error, Result};
