//! Index-mapping kernels shared by the shape-manipulating ops.

use crate::autodiff::tensor::{numel, strides};
use crate::autodiff::Real;

/// Visits every flat index of `shape` in row-major order together with the
/// flat index `sum(coord[d] * mapped[d])` into some other buffer.
pub(crate) fn for_each_mapped(shape: &[usize], mapped: &[usize], mut f: impl FnMut(usize, usize)) {
    debug_assert_eq!(shape.len(), mapped.len());
    let n = numel(shape);
    if n == 0 {
        return;
    }
    let nd = shape.len();
    let mut coord = vec![0usize; nd];
    let mut j = 0usize;
    for i in 0..n {
        f(i, j);
        for d in (0..nd).rev() {
            coord[d] += 1;
            j += mapped[d];
            if coord[d] < shape[d] {
                break;
            }
            j -= mapped[d] * shape[d];
            coord[d] = 0;
        }
    }
}

/// Strides of `small` aligned to the right of `big`, zero on broadcast axes.
pub(crate) fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    let s = strides(small);
    let off = big.len() - small.len();
    (0..big.len())
        .map(|d| if d < off || small[d - off] == 1 { 0 } else { s[d - off] })
        .collect()
}

pub(crate) fn broadcast<F: Real>(src: &[F], src_shape: &[usize], dst_shape: &[usize]) -> Vec<F> {
    let map = broadcast_strides(src_shape, dst_shape);
    let mut out = vec![F::zero(); numel(dst_shape)];
    for_each_mapped(dst_shape, &map, |i, j| out[i] = src[j]);
    out
}

pub(crate) fn sum_to<F: Real>(src: &[F], src_shape: &[usize], dst_shape: &[usize]) -> Vec<F> {
    let map = broadcast_strides(dst_shape, src_shape);
    let mut out = vec![F::zero(); numel(dst_shape)];
    for_each_mapped(src_shape, &map, |i, j| out[j] += src[i]);
    out
}

pub(crate) fn permute<F: Real>(src: &[F], src_shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<F>) {
    let s = strides(src_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| src_shape[p]).collect();
    let map: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let mut out = vec![F::zero(); src.len()];
    for_each_mapped(&out_shape, &map, |i, j| out[i] = src[j]);
    (out_shape, out)
}

/// Flat indices of the maximum over `axes`; the first element in row-major
/// order wins ties. Returns the kept-dims output shape too.
pub(crate) fn argmax_axes<F: Real>(src: &[F], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(d, &n)| if axes.contains(&d) { 1 } else { n })
        .collect();
    let map = broadcast_strides(&kept, shape);
    let m = numel(&kept);
    let mut best = vec![usize::MAX; m];
    for_each_mapped(shape, &map, |i, j| {
        let b = best[j];
        if b == usize::MAX || src[i] > src[b] {
            best[j] = i;
        }
    });
    (kept, best)
}

pub(crate) fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    F::gemm(m, k, n, a, b, &mut c);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes() {
        let (s, v) = permute(&[1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3], &[1, 0]);
        assert_eq!(s, vec![3, 2]);
        assert_eq!(v, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn broadcast_and_sum_are_adjoint() {
        let b = broadcast(&[1.0f64, 2.0], &[2, 1], &[2, 3]);
        assert_eq!(b, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let s = sum_to(&b, &[2, 3], &[2, 1]);
        assert_eq!(s, vec![3.0, 6.0]);
    }

    #[test]
    fn argmax_ties_go_first() {
        let (kept, idx) = argmax_axes(&[2.0f64, 7.0, 7.0], &[3], &[0]);
        assert_eq!(kept, vec![1]);
        assert_eq!(idx, vec![1]);
        let (_, idx) = argmax_axes(&[1.0f64, 5.0, 5.0, 0.0], &[2, 2], &[1]);
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn gemm_small() {
        assert_eq!(matmul(&[1.0f64, 2.0], &[3.0, 4.0], 1, 2, 1), vec![11.0]);
        assert_eq!(matmul(&[1.0f32, 0.0, 0.0, 1.0], &[5.0, 7.0], 2, 2, 1), vec![5.0, 7.0]);
    }
}
