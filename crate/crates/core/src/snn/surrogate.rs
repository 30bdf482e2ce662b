use crate::autodiff::{register_custom, CustomOp, Node, Real};
use crate::snn::{NeuronConfig, SpikeForward};

/// `sigma'(x) = 1 / (beta |x| + 1)^2`.
pub fn surrogate_derivative(x: f64, beta: f64) -> f64 {
    1.0 / (beta * x.abs() + 1.0).powi(2)
}

/// `d sigma'(x) / dx = -2 beta sign(x) / (beta |x| + 1)^3`, with `sign(0) = 0`.
pub fn surrogate_second_derivative(x: f64, beta: f64) -> f64 {
    let sign = if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    };
    -2.0 * beta * sign / (beta * x.abs() + 1.0).powi(3)
}

/// Heaviside step at zero with the fast-sigmoid surrogate derivatives.
pub fn spike_op(beta: f64) -> CustomOp {
    register_custom(
        "fast_sigmoid_spike",
        |x| if x >= 0.0 { 1.0 } else { 0.0 },
        move |x| surrogate_derivative(x, beta),
        Some(Box::new(move |x| surrogate_second_derivative(x, beta))),
    )
}

/// `x / (beta |x| + 1)` with its exact first and second derivatives.
pub fn smooth_spike_op(beta: f64) -> CustomOp {
    register_custom(
        "fast_sigmoid_smooth",
        move |x| x / (beta * x.abs() + 1.0),
        move |x| surrogate_derivative(x, beta),
        Some(Box::new(move |x| surrogate_second_derivative(x, beta))),
    )
}

/// Spikes `step(u - u_th)` in `{0, 1}`, or the smooth stand-in when
/// configured.
pub fn surrogate_spike<F: Real>(u: &Node<F>, config: &NeuronConfig) -> Node<F> {
    spike_op_for(config).apply(&u.offset(F::of(-config.u_th)))
}

/// The spike op selected by `config.spike_forward`.
pub fn spike_op_for(config: &NeuronConfig) -> CustomOp {
    match config.spike_forward {
        SpikeForward::Step => spike_op(config.surrogate_beta),
        SpikeForward::Smooth => smooth_spike_op(config.surrogate_beta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{backward, make_node};

    #[test]
    fn threshold_fires_with_unit_slope() {
        let cfg = NeuronConfig::default();
        let u = make_node::<f64>(&[], vec![cfg.u_th], true).unwrap();
        let s = surrogate_spike(&u, &cfg);
        assert_eq!(s.item(), 1.0);
        let g = backward(&s, std::slice::from_ref(&u), false).unwrap();
        assert_eq!(g[0].item(), 1.0);
    }

    #[test]
    fn slope_and_curvature_values() {
        assert!((surrogate_derivative(0.1, 10.0) - 0.25).abs() < 1e-15);
        // Symbolic derivative of (10|x|+1)^-2 at 0.1: -2*10/(2^3).
        assert!((surrogate_second_derivative(0.1, 10.0) + 2.5).abs() < 1e-15);
        assert_eq!(surrogate_second_derivative(0.0, 10.0), 0.0);
    }

    #[test]
    fn smooth_forward_matches_its_derivative() {
        let beta = 10.0;
        let f = |x: f64| x / (beta * x.abs() + 1.0);
        for x in [-0.3, -0.01, 0.02, 0.4] {
            let h = 1e-6;
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            assert!((fd - surrogate_derivative(x, beta)).abs() < 1e-8);
        }
        let cfg = NeuronConfig { spike_forward: SpikeForward::Smooth, u_th: 0.5, ..Default::default() };
        let u = make_node::<f64>(&[], vec![0.6], true).unwrap();
        assert!((surrogate_spike(&u, &cfg).item() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn second_order_through_spike() {
        let cfg = NeuronConfig { u_th: 1.0, surrogate_beta: 10.0, ..Default::default() };
        let u = make_node::<f64>(&[], vec![1.1], true).unwrap();
        let g = backward(&surrogate_spike(&u, &cfg), std::slice::from_ref(&u), true).unwrap();
        assert!((g[0].item() - 0.25).abs() < 1e-15);
        let gg = backward(&g[0], std::slice::from_ref(&u), false).unwrap();
        assert!((gg[0].item() + 2.5).abs() < 1e-12);
    }
}
