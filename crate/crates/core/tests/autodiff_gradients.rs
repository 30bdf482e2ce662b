mod common;

use common::{assert_grad_close, central_diff, random_vec};
use proptest::prelude::*;
use spikemeta::autodiff::{
    backward, backward_retained, make_node, no_grad, register_custom, softmax_cross_entropy, Node, Tensor,
};

fn leaf(shape: &[usize], v: &[f64]) -> Node<f64> {
    make_node(shape, v.to_vec(), true).unwrap()
}

fn konst(shape: &[usize], v: &[f64]) -> Node<f64> {
    make_node(shape, v.to_vec(), false).unwrap()
}

#[test]
fn square_gradient_and_curvature() {
    let x = leaf(&[], &[3.0]);
    let y = x.mul(&x).unwrap();
    let g = backward(&y, std::slice::from_ref(&x), true).unwrap();
    assert_eq!(g[0].item(), 6.0);
    assert!(g[0].has_lineage());
    let gg = backward(&g[0], std::slice::from_ref(&x), false).unwrap();
    assert_eq!(gg[0].item(), 2.0);
}

#[test]
fn abs_subgradient_convention() {
    let x = leaf(&[2], &[-2.0, 0.0]);
    let y = x.abs();
    assert_eq!(y.value(), &[2.0, 0.0]);
    let g = backward(&y.sum(), std::slice::from_ref(&x), false).unwrap();
    assert_eq!(g[0].value(), &[-1.0, 0.0]);
}

#[test]
fn matmul_linearity_gradient() {
    let row = leaf(&[1, 2], &[0.3, -1.7]);
    let ones = konst(&[2, 1], &[1.0, 1.0]);
    let g = backward(&row.matmul(&ones).unwrap().sum(), std::slice::from_ref(&row), false).unwrap();
    assert_eq!(g[0].value(), &[1.0, 1.0]);
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let c = konst(&[3], &[1.0, 2.0, 3.0]);
    let w = leaf(&[2], &[1.0, 1.0]);
    let g = backward(&c.sum(), std::slice::from_ref(&w), false).unwrap();
    assert_eq!(g[0].value(), &[0.0, 0.0]);
}

#[test]
fn unreachable_parameter_gets_exact_zero() {
    let a = leaf(&[2], &[1.0, 2.0]);
    let b = leaf(&[3], &[1.0, 2.0, 3.0]);
    let loss = a.exp().sum();
    let g = backward(&loss, &[a.clone(), b.clone()], false).unwrap();
    assert_eq!(g[1].value(), &[0.0, 0.0, 0.0]);
    assert_eq!(g.get(&b).unwrap().shape(), &[3]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let a = leaf(&[2], &[1.0, 2.0]);
    assert!(backward(&a, std::slice::from_ref(&a), false).is_err());
}

#[test]
fn first_order_backward_releases_lineage() {
    let a = leaf(&[2], &[1.0, 2.0]);
    let mid = a.exp();
    let loss = mid.sum();
    backward(&loss, std::slice::from_ref(&a), false).unwrap();
    assert!(!mid.has_lineage());
    let mid2 = a.exp();
    let loss2 = mid2.sum();
    backward(&loss2, std::slice::from_ref(&a), true).unwrap();
    assert!(mid2.has_lineage());
}

/// `f(x) = sum(exp(a*x) / (1 + |x|)) . w` style three-op graph.
fn three_op(x: &Node<f64>, w: &Node<f64>) -> Node<f64> {
    let e = x.scale(0.7).exp();
    let d = e.div(&x.abs().offset(1.0)).unwrap();
    d.mul(w).unwrap().sum()
}

#[test]
fn random_graph_matches_central_differences() {
    let xv = random_vec(11, 6, -1.5, 1.5);
    let wv = random_vec(12, 6, -1.0, 1.0);
    let x = leaf(&[6], &xv);
    let w = konst(&[6], &wv);
    let g = backward(&three_op(&x, &w), std::slice::from_ref(&x), false).unwrap();
    let numeric = central_diff(
        |p| {
            let _ng = no_grad();
            three_op(&konst(&[6], p), &w).item()
        },
        &xv,
        1e-6,
    );
    assert_grad_close(g[0].value(), &numeric, 1e-8, 1e-8, 1e-9);
}

#[test]
fn polynomial_second_derivatives_are_exact() {
    // f(x, y) = x^3 y + 2 x y^2, Hessian [[6xy, 3x^2 + 4y], [3x^2 + 4y, 4x]].
    let (xv, yv) = (1.3, -0.7);
    let x = leaf(&[], &[xv]);
    let y = leaf(&[], &[yv]);
    let x3 = x.mul(&x).unwrap().mul(&x).unwrap();
    let f = x3.mul(&y).unwrap().add(&x.mul(&y).unwrap().mul(&y).unwrap().scale(2.0)).unwrap();
    let g = backward(&f, &[x.clone(), y.clone()], true).unwrap();
    let hx = backward_retained(&g[0], &[x.clone(), y.clone()], false).unwrap();
    let hy = backward(&g[1], &[x.clone(), y.clone()], false).unwrap();
    let expect = [[6.0 * xv * yv, 3.0 * xv * xv + 4.0 * yv], [3.0 * xv * xv + 4.0 * yv, 4.0 * xv]];
    for (row, h) in [hx, hy].iter().enumerate() {
        for col in 0..2 {
            assert!((h[col].item() - expect[row][col]).abs() < 1e-10);
        }
    }
}

#[test]
fn conv_bias_gradient_counts_outputs() {
    let xv = random_vec(3, 2 * 4 * 4, -1.0, 1.0);
    let kv = random_vec(4, 3 * 3, -1.0, 1.0);
    let x = konst(&[2, 1, 4, 4], &xv);
    let k = konst(&[1, 1, 3, 3], &kv);
    let b = leaf(&[1], &[0.25]);
    let out = x.conv2d(&k, &b, 1, 0).unwrap();
    assert_eq!(out.shape(), &[2, 1, 2, 2]);
    let g = backward(&out.sum(), std::slice::from_ref(&b), false).unwrap();
    let numeric = central_diff(
        |p| {
            let _ng = no_grad();
            x.conv2d(&k, &konst(&[1], p), 1, 0).unwrap().sum().item()
        },
        &[0.25],
        1e-5,
    );
    // H'*W'*B = 2*2*2.
    assert!((g[0].item() - 8.0).abs() < 1e-12);
    assert!((numeric[0] - 8.0).abs() < 1e-6);
}

fn conv_loss(x: &Node<f64>, k: &Node<f64>, b: &Node<f64>, w: &Node<f64>) -> Node<f64> {
    let out = x.conv2d(k, b, 2, 1).unwrap();
    out.mul(&out).unwrap().mul(w).unwrap().sum()
}

#[test]
fn conv_gradients_match_central_differences() {
    let xv = random_vec(21, 2 * 2 * 5 * 5, -1.0, 1.0);
    let kv = random_vec(22, 3 * 2 * 3 * 3, -0.5, 0.5);
    let bv = random_vec(23, 3, -0.5, 0.5);
    let wv = random_vec(24, 2 * 3 * 3 * 3, -1.0, 1.0);
    let x = leaf(&[2, 2, 5, 5], &xv);
    let k = leaf(&[3, 2, 3, 3], &kv);
    let b = leaf(&[3], &bv);
    let w = konst(&[2, 3, 3, 3], &wv);
    let g = backward(&conv_loss(&x, &k, &b, &w), &[x.clone(), k.clone(), b.clone()], false).unwrap();
    let nx = central_diff(|p| conv_loss(&konst(&[2, 2, 5, 5], p), &k, &b, &w).item(), &xv, 1e-5);
    let nk = central_diff(|p| conv_loss(&x, &konst(&[3, 2, 3, 3], p), &b, &w).item(), &kv, 1e-5);
    let nb = central_diff(|p| conv_loss(&x, &k, &konst(&[3], p), &w).item(), &bv, 1e-5);
    assert_grad_close(g[0].value(), &nx, 1e-4, 1e-8, 1e-7);
    assert_grad_close(g[1].value(), &nk, 1e-4, 1e-8, 1e-7);
    assert_grad_close(g[2].value(), &nb, 1e-4, 1e-8, 1e-7);
}

#[test]
fn conv_second_order_matches_differences_of_gradient() {
    // d/dk of (sum of squares of d loss/d x) checked against differences.
    let xv = random_vec(31, 4 * 4, -1.0, 1.0);
    let kv = random_vec(32, 9, -0.5, 0.5);
    let x = leaf(&[1, 1, 4, 4], &xv);
    let b = konst(&[1], &[0.1]);
    let w = konst(&[1, 1, 2, 2], &random_vec(33, 4, -1.0, 1.0));
    let meta = |kv: &[f64], create: bool| {
        let k = leaf(&[1, 1, 3, 3], kv);
        let gx = backward(&conv_loss(&x, &k, &b, &w), std::slice::from_ref(&x), create).unwrap();
        (k, gx[0].mul(&gx[0]).unwrap().sum())
    };
    let (k, m) = meta(&kv, true);
    let g = backward(&m, &[k], false).unwrap();
    let numeric = central_diff(|p| meta(p, false).1.item(), &kv, 1e-5);
    assert_grad_close(g[0].value(), &numeric, 1e-4, 1e-8, 1e-7);
}

#[test]
fn maxpool_routes_to_first_maximum() {
    let x = leaf(&[1, 1, 2, 2], &[5.0, 5.0, 5.0, 5.0]);
    let y = x.maxpool2().unwrap();
    assert_eq!(y.value(), &[5.0]);
    let g = backward(&y.sum(), std::slice::from_ref(&x), false).unwrap();
    assert_eq!(g[0].value(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn maxpool_gradient_matches_central_differences() {
    let xv = random_vec(41, 16, -1.0, 1.0);
    let w = konst(&[1, 1, 2, 2], &[0.3, -1.2, 0.8, 2.0]);
    let f = |x: &Node<f64>| x.maxpool2().unwrap().mul(&w).unwrap().sum();
    let x = leaf(&[1, 1, 4, 4], &xv);
    let g = backward(&f(&x), std::slice::from_ref(&x), false).unwrap();
    let numeric = central_diff(|p| f(&konst(&[1, 1, 4, 4], p)).item(), &xv, 1e-5);
    assert_grad_close(g[0].value(), &numeric, 1e-4, 1e-8, 1e-7);
}

#[test]
fn max_reduce_tie_break() {
    let x = leaf(&[3], &[2.0, 7.0, 7.0]);
    let m = x.max_axes(&[0]).unwrap();
    assert_eq!(m.item(), 7.0);
    let g = backward(&m, std::slice::from_ref(&x), false).unwrap();
    assert_eq!(g[0].value(), &[0.0, 1.0, 0.0]);
}

#[test]
fn cross_entropy_matches_central_differences() {
    let lv = random_vec(51, 3 * 4, -2.0, 2.0);
    let targets = [1, 3, 0];
    let l = leaf(&[3, 4], &lv);
    let g = backward(&softmax_cross_entropy(&l, &targets).unwrap(), std::slice::from_ref(&l), false).unwrap();
    let numeric = central_diff(|p| softmax_cross_entropy(&konst(&[3, 4], p), &targets).unwrap().item(), &lv, 1e-6);
    assert_grad_close(g[0].value(), &numeric, 1e-7, 1e-8, 1e-9);
}

#[test]
fn custom_identity_and_square() {
    let ident = register_custom("identity", |x| x, |_| 1.0, Some(Box::new(|_| 0.0)));
    let x = leaf(&[], &[1.7]);
    let y = ident.apply(&x);
    let g = backward(&y, std::slice::from_ref(&x), true).unwrap();
    assert_eq!(g[0].item(), 1.0);
    let gg = backward(&g[0], std::slice::from_ref(&x), false).unwrap();
    assert_eq!(gg[0].item(), 0.0);

    let square = register_custom("square", |x| x * x, |x| 2.0 * x, Some(Box::new(|_| 2.0)));
    let xs = leaf(&[3], &[-1.0, 0.5, 2.0]);
    let custom = backward(&square.apply(&xs).sum(), std::slice::from_ref(&xs), true).unwrap();
    let builtin = backward(&xs.mul(&xs).unwrap().sum(), std::slice::from_ref(&xs), true).unwrap();
    assert_eq!(custom[0].value(), builtin[0].value());
    let c2 = backward(&custom[0].sum(), std::slice::from_ref(&xs), false).unwrap();
    let b2 = backward(&builtin[0].sum(), std::slice::from_ref(&xs), false).unwrap();
    assert_eq!(c2[0].value(), b2[0].value());
}

#[test]
fn custom_without_curvature_rejects_second_order() {
    let op = register_custom("tanh", f64::tanh, |x| 1.0 - x.tanh().powi(2), None);
    let x = leaf(&[], &[0.3]);
    assert!(backward(&op.apply(&x), std::slice::from_ref(&x), true).is_err());
    let g = backward(&op.apply(&x), std::slice::from_ref(&x), false).unwrap();
    assert!((g[0].item() - (1.0 - 0.3f64.tanh().powi(2))).abs() < 1e-15);
}

#[test]
fn replay_is_bitwise_deterministic() {
    let run = || {
        let xv = random_vec(61, 2 * 2 * 6 * 6, -1.0, 1.0);
        let kv = random_vec(62, 4 * 2 * 5 * 5, -0.3, 0.3);
        let x = konst(&[2, 2, 6, 6], &xv);
        let k = leaf(&[4, 2, 5, 5], &kv);
        let b = leaf(&[4], &[0.1, -0.1, 0.2, 0.0]);
        let y = x.conv2d(&k, &b, 1, 2).unwrap().maxpool2().unwrap();
        let loss = y.exp().mean();
        let g = backward(&loss, &[k, b], false).unwrap();
        (loss.item().to_bits(), g.into_vec().iter().map(|n| n.to_tensor()).collect::<Vec<Tensor<f64>>>())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1, l2);
    for (a, b) in g1.iter().zip(&g2) {
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn f32_engine_runs() {
    let x = make_node::<f32>(&[2], vec![1.0, 2.0], true).unwrap();
    let g = backward(&x.mul(&x).unwrap().sum(), std::slice::from_ref(&x), false).unwrap();
    assert_eq!(g[0].value(), &[2.0f32, 4.0]);
}

proptest! {
    #[test]
    fn backward_is_linear(xv in proptest::collection::vec(-2.0f64..2.0, 4), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = leaf(&[4], &xv);
        let f = |x: &Node<f64>| x.exp().sum();
        let g = |x: &Node<f64>| x.mul(x).unwrap().mul(&x.sign()).unwrap().sum();
        let combo = f(&x).scale(a).add(&g(&x).scale(b)).unwrap();
        let gc = backward(&combo, std::slice::from_ref(&x), false).unwrap();
        let gf = backward(&f(&x), std::slice::from_ref(&x), false).unwrap();
        let gg = backward(&g(&x), std::slice::from_ref(&x), false).unwrap();
        for i in 0..4 {
            let expect = a * gf[0].value()[i] + b * gg[0].value()[i];
            prop_assert!((gc[0].value()[i] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn composite_matches_finite_differences(xv in proptest::collection::vec(-1.0f64..1.0, 5)) {
        let w = konst(&[5], &[0.5, -1.0, 2.0, 0.1, -0.3]);
        let x = leaf(&[5], &xv);
        let loss = three_op(&x, &w);
        let g = backward(&loss, std::slice::from_ref(&x), false).unwrap();
        let numeric = central_diff(|p| three_op(&konst(&[5], p), &w).item(), &xv, 1e-5);
        for (i, (&an, &nu)) in g[0].value().iter().zip(&numeric).enumerate() {
            // |x| has a kink at zero; skip samples that straddle it.
            if xv[i].abs() < 1e-4 { continue; }
            if nu.abs() > 1e-8 {
                prop_assert!((an - nu).abs() / nu.abs() < 1e-4);
            } else {
                prop_assert!((an - nu).abs() < 1e-7);
            }
        }
    }
}
