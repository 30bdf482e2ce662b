//! User-registered elementwise operations.

use std::fmt;
use std::rc::Rc;

use crate::autodiff::node::Op;
use crate::autodiff::{Node, Real};

type ScalarFn = Box<dyn Fn(f64) -> f64>;

struct CustomDef {
    name: String,
    forward: ScalarFn,
    derivative: ScalarFn,
    second: Option<ScalarFn>,
}

/// Handle to an elementwise op `y = f(x)` with a user-supplied derivative
/// `f'` and, optionally, curvature `f''`.
///
/// The backward pass multiplies the upstream gradient by `f'(x)`; that
/// product is itself recorded, and differentiating it uses `f''(x)`.
/// Without `f''` the op still works for first-order gradients but a
/// `create_graph` backward through it fails. Third derivatives are not
/// available.
#[derive(Clone)]
pub struct CustomOp(Rc<CustomDef>);

impl fmt::Debug for CustomOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomOp")
            .field("name", &self.0.name)
            .field("second_order", &self.0.second.is_some())
            .finish()
    }
}

pub fn register_custom(
    name: impl Into<String>,
    forward: impl Fn(f64) -> f64 + 'static,
    derivative: impl Fn(f64) -> f64 + 'static,
    second_derivative: Option<Box<dyn Fn(f64) -> f64>>,
) -> CustomOp {
    CustomOp(Rc::new(CustomDef {
        name: name.into(),
        forward: Box::new(forward),
        derivative: Box::new(derivative),
        second: second_derivative,
    }))
}

impl CustomOp {
    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn has_second_order(&self) -> bool {
        self.0.second.is_some()
    }

    pub fn apply<F: Real>(&self, x: &Node<F>) -> Node<F> {
        self.eval(x, 0)
    }

    pub(crate) fn eval<F: Real>(&self, x: &Node<F>, order: u8) -> Node<F> {
        let f: &dyn Fn(f64) -> f64 = match order {
            0 => &self.0.forward,
            1 => &self.0.derivative,
            _ => self.0.second.as_deref().expect("caller checks for second order"),
        };
        let v = x.value().iter().map(|&a| F::of(f(a.f64()))).collect();
        Node::from_op(x.shape().to_vec(), v, Op::Custom(x.clone(), self.clone(), order))
    }
}
