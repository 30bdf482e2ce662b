#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite differences of a scalar function of a flat vector.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error where the reference is large enough, absolute otherwise.
pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], rel: f64, abs_floor: f64, abs_tol: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        if n.abs().max(a.abs()) > abs_floor {
            let err = (a - n).abs() / n.abs().max(a.abs());
            assert!(err < rel, "component {i}: analytic {a} vs numeric {n} (rel {err})");
        } else {
            assert!((a - n).abs() < abs_tol, "component {i}: analytic {a} vs numeric {n}");
        }
    }
}

pub fn random_vec(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}
