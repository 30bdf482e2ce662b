//! Reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Node`] is an immutable array that remembers the operation that
//! produced it while recording is active. [`backward`] walks that lineage in
//! reverse; with `create_graph = true` the gradients it returns are recorded
//! too, so they can be differentiated again. That second pass is what the
//! outer MAML loop needs.
//!
//! Every primitive's vector-Jacobian product is expressed in terms of other
//! primitives (matmul's adjoint is matmul, `im2col` pairs with `col2im`,
//! `gather` with `scatter_add`, `broadcast_to` with `sum_to`), which makes the
//! whole op set closed under differentiation.
//!
//! Graphs are thread-confined (`Rc`); move data between threads as
//! [`Tensor`]s.

mod backward;
mod conv;
mod custom;
mod kernels;
mod loss;
mod node;
mod ops;
mod real;
mod tensor;

pub use backward::{backward, backward_retained, GradMap};
pub use custom::{register_custom, CustomOp};
pub use loss::softmax_cross_entropy;
pub use node::{is_recording, make_node, no_grad, recorded_stats, reset_peak, Node, NoGradGuard, NodeId, RecordedStats};
pub use real::Real;
pub use tensor::{broadcast_shape, numel, Tensor};

/// Reduction kinds accepted by [`Node::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

pub use ops::{elementwise, stack, Elementwise};
