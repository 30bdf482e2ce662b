//! Convolution (as `im2col` + matmul) and 2x2 max pooling.

use std::rc::Rc;

use crate::autodiff::node::Op;
use crate::autodiff::{Node, Real};
use crate::error::{Error, Result};

/// Geometry of one cross-correlation. `im2col` maps an input of
/// `[batch, cin, h, w]` to columns of `[cin*kh*kw, batch*ho*wo]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cin, self.h, self.w]
    }

    fn cols_shape(&self) -> Vec<usize> {
        vec![self.cin * self.kh * self.kw, self.batch * self.ho * self.wo]
    }

    /// Calls `f(col_index, input_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let n_cols = self.batch * self.ho * self.wo;
        for c in 0..self.cin {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    for b in 0..self.batch {
                        let in_base = (b * self.cin + c) * self.h;
                        for oy in 0..self.ho {
                            let y = (oy * self.stride + i) as isize - self.pad as isize;
                            if y < 0 || y >= self.h as isize {
                                continue;
                            }
                            let in_row = (in_base + y as usize) * self.w;
                            let col_row = row * n_cols + (b * self.ho + oy) * self.wo;
                            for ox in 0..self.wo {
                                let x = (ox * self.stride + j) as isize - self.pad as isize;
                                if x < 0 || x >= self.w as isize {
                                    continue;
                                }
                                f(col_row + ox, in_row + x as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<F: Real> Node<F> {
    pub(crate) fn im2col(&self, g: ConvGeom) -> Node<F> {
        debug_assert_eq!(self.shape(), g.input_shape().as_slice());
        let shape = g.cols_shape();
        let mut v = vec![F::zero(); shape[0] * shape[1]];
        let src = self.value();
        g.for_each_tap(|ci, ii| v[ci] = src[ii]);
        Node::from_op(shape, v, Op::Im2Col(self.clone(), g))
    }

    pub(crate) fn col2im(&self, g: ConvGeom) -> Node<F> {
        debug_assert_eq!(self.shape(), g.cols_shape().as_slice());
        let shape = g.input_shape();
        let mut v = vec![F::zero(); shape.iter().product()];
        let src = self.value();
        g.for_each_tap(|ci, ii| v[ii] += src[ci]);
        Node::from_op(shape, v, Op::Col2Im(self.clone(), g))
    }

    /// 2-D cross-correlation (no kernel flip) of `[B,Cin,H,W]` with
    /// `[Cout,Cin,kh,kw]` plus a per-channel bias `[Cout]`.
    pub fn conv2d(&self, kernel: &Node<F>, bias: &Node<F>, stride: usize, padding: usize) -> Result<Node<F>> {
        let (&[b, cin, h, w], &[cout, kcin, kh, kw]) = (self.shape(), kernel.shape()) else {
            return Err(Error::structural(format!(
                "conv2d needs 4-d input and kernel, got {:?} and {:?}",
                self.shape(),
                kernel.shape()
            )));
        };
        if cin != kcin {
            return Err(Error::structural(format!("conv2d input has {cin} channels, kernel expects {kcin}")));
        }
        if bias.shape() != [cout] {
            return Err(Error::structural(format!("conv2d bias must be [{cout}], got {:?}", bias.shape())));
        }
        if stride == 0 {
            return Err(Error::structural("conv2d stride must be at least 1"));
        }
        if kh == 0 || kw == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::structural(format!(
                "kernel {kh}x{kw} does not fit padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let g = ConvGeom { batch: b, cin, h, w, kh, kw, stride, pad: padding, ho, wo };
        let cols = self.im2col(g);
        let kmat = kernel.reshape(&[cout, cin * kh * kw])?;
        let out = kmat
            .matmul(&cols)?
            .reshape(&[cout, b, ho, wo])?
            .permute(&[1, 0, 2, 3])?;
        out.add(&bias.reshape(&[cout, 1, 1])?)
    }

    /// Non-overlapping 2x2 max pooling over the two trailing axes. Ties go
    /// to the first element of the window in row-major order.
    pub fn maxpool2(&self) -> Result<Node<F>> {
        let &[b, c, h, w] = self.shape() else {
            return Err(Error::structural(format!("maxpool2 needs [B,C,H,W], got {:?}", self.shape())));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::structural(format!("maxpool2 needs even H and W, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value();
        let mut idx = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let first = base + 2 * oy * w + 2 * ox;
                    let mut best = first;
                    for cand in [first + 1, first + w, first + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    idx.push(best);
                }
            }
        }
        self.gather(Rc::from(idx), &[b, c, ho, wo])
    }

    /// Keeps the top-left `h x w` corner of the trailing two axes.
    pub fn crop2d(&self, h: usize, w: usize) -> Result<Node<F>> {
        let &[b, c, ih, iw] = self.shape() else {
            return Err(Error::structural(format!("crop2d needs [B,C,H,W], got {:?}", self.shape())));
        };
        if h > ih || w > iw {
            return Err(Error::structural(format!("cannot crop {ih}x{iw} to {h}x{w}")));
        }
        if (h, w) == (ih, iw) {
            return Ok(self.clone());
        }
        let mut idx = Vec::with_capacity(b * c * h * w);
        for plane in 0..b * c {
            for y in 0..h {
                let row = (plane * ih + y) * iw;
                idx.extend(row..row + w);
            }
        }
        self.gather(Rc::from(idx), &[b, c, h, w])
    }
}

#[cfg(test)]
mod tests {
    use crate::autodiff::{make_node, Node};

    fn n(shape: &[usize], v: Vec<f64>) -> Node<f64> {
        make_node(shape, v, false).unwrap()
    }

    #[test]
    fn ones_kernel_sums() {
        let x = n(&[1, 1, 3, 3], vec![1.0; 9]);
        let k = n(&[1, 1, 3, 3], vec![1.0; 9]);
        let out = x.conv2d(&k, &n(&[1], vec![0.0]), 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.value(), &[9.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let vals: Vec<f64> = (0..16).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = n(&[1, 1, 4, 4], vals.clone());
        let mut kv = vec![0.0; 25];
        kv[12] = 1.0;
        let out = x.conv2d(&n(&[1, 1, 5, 5], kv), &n(&[1], vec![0.0]), 1, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 4]);
        assert_eq!(out.value(), vals.as_slice());
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = n(&[1, 1, 2, 2], vec![1.0; 4]);
        let k = n(&[1, 1, 3, 3], vec![1.0; 9]);
        assert!(x.conv2d(&k, &n(&[1], vec![0.0]), 1, 0).is_err());
        assert!(x.conv2d(&k, &n(&[1], vec![0.0]), 0, 1).is_err());
    }

    #[test]
    fn maxpool_values_and_odd_shape() {
        let x = n(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.maxpool2().unwrap().value(), &[4.0]);
        assert!(n(&[1, 1, 3, 2], vec![0.0; 6]).maxpool2().is_err());
    }

    #[test]
    fn crop_keeps_corner() {
        let x = n(&[1, 1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = x.crop2d(2, 2).unwrap();
        assert_eq!(c.value(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
