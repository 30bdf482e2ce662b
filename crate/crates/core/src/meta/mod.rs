//! Model-agnostic meta-learning: SGD inner adaptation, the summed query
//! objective, second- and first-order meta-gradients, ADAM outer updates,
//! magnitude-gated inner updates and update statistics.

mod maml;
mod optim;
mod snn_learner;
mod stats;

pub use maml::{
    inner_adapt, meta_gradient, meta_step, outer_loss, thresholded_inner_adapt, Learner, MetaHyper, MetaMode,
    MetaStepReport, Task, RANGE_FRACTION,
};
pub use optim::{adam_update, sgd_update, AdamState, ADAM_B1, ADAM_B2, ADAM_EPS};
pub use snn_learner::SnnLearner;
pub use stats::{update_stats, MagnitudeStats, UpdateStats};
