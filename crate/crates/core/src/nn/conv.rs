//! Convolution ops built on im2col/col2im plus the unfold/fold pair used by
//! the recurrent grid modules. All gradients route through the same two
//! gather/scatter primitives, which are exact adjoints of each other.

use ndarray::{Array2, ArrayD, Ix2, IxDyn};

use crate::num::Scalar;

use super::tape::{Tape, Tensor};

/// Gather `[C,H,W]` into `[C*kh*kw, Ph*Pw]` patch columns; out-of-range taps
/// read zero.
fn im2col<T: Scalar>(
    x: &ArrayD<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    positions: (usize, usize),
) -> Array2<T> {
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let (nh, nw) = positions;
    let c = x.shape()[0];
    let h = x.shape()[1];
    let w = x.shape()[2];
    let xs = x.view().into_dimensionality::<ndarray::Ix3>().unwrap();
    let std = xs.as_standard_layout();
    let data = std.as_slice().unwrap();

    let mut cols = Array2::<T>::zeros((c * kh * kw, nh * nw));
    let cols_slice = cols.as_slice_mut().unwrap();
    let row_len = nh * nw;
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ci * kh + i) * kw + j) * row_len;
                for p in 0..nh {
                    let hi = (p * sh + i) as isize - ph as isize;
                    if hi < 0 || hi as usize >= h {
                        continue;
                    }
                    let src_base = (ci * h + hi as usize) * w;
                    let dst_base = row + p * nw;
                    for q in 0..nw {
                        let wi = (q * sw + j) as isize - pw as isize;
                        if wi < 0 || wi as usize >= w {
                            continue;
                        }
                        cols_slice[dst_base + q] = data[src_base + wi as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add `[C*kh*kw, Ph*Pw]` columns back into `[C,H,W]`; the exact
/// adjoint of [`im2col`].
fn col2im<T: Scalar>(
    cols: &Array2<T>,
    channels: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    positions: (usize, usize),
    out_hw: (usize, usize),
) -> ArrayD<T> {
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let (nh, nw) = positions;
    let (h, w) = out_hw;
    let mut out = ArrayD::<T>::zeros(IxDyn(&[channels, h, w]));
    let out_slice = out.as_slice_mut().unwrap();
    let cols_slice = cols.as_slice().unwrap();
    let row_len = nh * nw;
    for ci in 0..channels {
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ci * kh + i) * kw + j) * row_len;
                for p in 0..nh {
                    let hi = (p * sh + i) as isize - ph as isize;
                    if hi < 0 || hi as usize >= h {
                        continue;
                    }
                    let dst_base = (ci * h + hi as usize) * w;
                    let src_base = row + p * nw;
                    for q in 0..nw {
                        let wi = (q * sw + j) as isize - pw as isize;
                        if wi < 0 || wi as usize >= w {
                            continue;
                        }
                        out_slice[dst_base + wi as usize] += cols_slice[src_base + q];
                    }
                }
            }
        }
    }
    out
}

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

impl<T: Scalar> Tape<T> {
    /// 2-D convolution: `x [Cin,H,W]`, `w [Cout,Cin,kh,kw]` -> `[Cout,Ho,Wo]`.
    pub fn conv2d(
        &mut self,
        x: Tensor,
        w: Tensor,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Tensor {
        let xv = self.rc_value(x);
        let wv = self.rc_value(w);
        assert_eq!(xv.ndim(), 3, "conv2d: input must be [C,H,W]");
        assert_eq!(wv.ndim(), 4, "conv2d: weight must be [Cout,Cin,kh,kw]");
        let (cin, h, win) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (cout, wcin, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        assert_eq!(cin, wcin, "conv2d: channel mismatch");
        assert!(
            h + 2 * pad.0 >= kh && win + 2 * pad.1 >= kw,
            "conv2d: kernel larger than padded input"
        );
        let ho = conv_out_extent(h, kh, stride.0, pad.0);
        let wo = conv_out_extent(win, kw, stride.1, pad.1);

        let cols = im2col(&xv, (kh, kw), stride, pad, (ho, wo));
        let wf = wv
            .view()
            .into_shape_with_order(IxDyn(&[cout, cin * kh * kw]))
            .unwrap()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .to_owned();
        let y = wf.dot(&cols);
        let value = y.into_shape_with_order(IxDyn(&[cout, ho, wo])).unwrap();

        if !self.tracking(&[x, w]) {
            return self.push_node(value, vec![], None, None, false);
        }
        self.push_op(
            value,
            vec![x.0, w.0],
            Box::new(move |g| {
                let gf = g
                    .view()
                    .into_shape_with_order(IxDyn(&[cout, ho * wo]))
                    .unwrap()
                    .into_dimensionality::<Ix2>()
                    .unwrap()
                    .to_owned();
                let wf = wv
                    .view()
                    .into_shape_with_order(IxDyn(&[cout, cin * kh * kw]))
                    .unwrap()
                    .into_dimensionality::<Ix2>()
                    .unwrap()
                    .to_owned();
                // dW = g . cols^T (columns recomputed from the saved input).
                let cols = im2col(&xv, (kh, kw), stride, pad, (ho, wo));
                let dw = gf.dot(&cols.t());
                let dw = dw
                    .into_shape_with_order(IxDyn(&[cout, cin, kh, kw]))
                    .unwrap();
                // dX = col2im(W^T . g).
                let dcols = wf.t().dot(&gf);
                let dx = col2im(&dcols, cin, (kh, kw), stride, pad, (ho, wo), (h, win));
                vec![dx, dw]
            }),
        )
    }

    /// Transposed 2-D convolution: `x [Cin,H,W]`, `w [Cin,Cout,kh,kw]`,
    /// explicit output size `out_hw` (contributions falling outside are
    /// dropped, which also realizes output cropping).
    pub fn conv2d_transpose(
        &mut self,
        x: Tensor,
        w: Tensor,
        stride: (usize, usize),
        pad: (usize, usize),
        out_hw: (usize, usize),
    ) -> Tensor {
        let xv = self.rc_value(x);
        let wv = self.rc_value(w);
        assert_eq!(xv.ndim(), 3, "conv2d_transpose: input must be [C,H,W]");
        assert_eq!(wv.ndim(), 4, "conv2d_transpose: weight must be [Cin,Cout,kh,kw]");
        let (cin, h, win) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (wcin, cout, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        assert_eq!(cin, wcin, "conv2d_transpose: channel mismatch");
        let (ho, wo) = out_hw;

        let xf = xv
            .view()
            .into_shape_with_order(IxDyn(&[cin, h * win]))
            .unwrap()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .to_owned();
        let wf = wv
            .view()
            .into_shape_with_order(IxDyn(&[cin, cout * kh * kw]))
            .unwrap()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .to_owned();
        let proj = wf.t().dot(&xf);
        let value = col2im(&proj, cout, (kh, kw), stride, pad, (h, win), (ho, wo));

        if !self.tracking(&[x, w]) {
            return self.push_node(value, vec![], None, None, false);
        }
        self.push_op(
            value,
            vec![x.0, w.0],
            Box::new(move |g| {
                let dproj = im2col(g, (kh, kw), stride, pad, (h, win));
                let wf = wv
                    .view()
                    .into_shape_with_order(IxDyn(&[cin, cout * kh * kw]))
                    .unwrap()
                    .into_dimensionality::<Ix2>()
                    .unwrap()
                    .to_owned();
                let xf = xv
                    .view()
                    .into_shape_with_order(IxDyn(&[cin, h * win]))
                    .unwrap()
                    .into_dimensionality::<Ix2>()
                    .unwrap()
                    .to_owned();
                let dx = wf.dot(&dproj);
                let dx = dx.into_shape_with_order(IxDyn(&[cin, h, win])).unwrap();
                let dw = xf.dot(&dproj.t());
                let dw = dw
                    .into_shape_with_order(IxDyn(&[cin, cout, kh, kw]))
                    .unwrap();
                vec![dx, dw]
            }),
        )
    }

    /// Unfold the last axis of `[C,A,B]` into overlapping windows:
    /// output `[S, A, C*k]` with `S = (B - k) / s + 1`; `B - k` must be
    /// divisible by `s` (callers pre-pad to the formula extent).
    pub fn unfold_last(&mut self, x: Tensor, kernel: usize, stride: usize) -> Tensor {
        let xv = self.rc_value(x);
        assert_eq!(xv.ndim(), 3, "unfold_last: input must be [C,A,B]");
        let (c, a, b) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert!(b >= kernel, "unfold_last: extent smaller than kernel");
        assert_eq!(
            (b - kernel) % stride,
            0,
            "unfold_last: extent {b} not aligned to kernel {kernel}/stride {stride}"
        );
        let s = (b - kernel) / stride + 1;
        let xs = xv.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let mut value = ArrayD::<T>::zeros(IxDyn(&[s, a, c * kernel]));
        {
            let out = value.as_slice_mut().unwrap();
            for p in 0..s {
                for ai in 0..a {
                    let base = (p * a + ai) * c * kernel;
                    for ci in 0..c {
                        for i in 0..kernel {
                            out[base + ci * kernel + i] = xs[[ci, ai, p * stride + i]];
                        }
                    }
                }
            }
        }
        if !self.tracking(&[x]) {
            return self.push_node(value, vec![], None, None, false);
        }
        self.push_op(
            value,
            vec![x.0],
            Box::new(move |g| {
                let gv = g.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let mut dx = ArrayD::<T>::zeros(IxDyn(&[c, a, b]));
                {
                    let dxs = dx.as_slice_mut().unwrap();
                    for p in 0..s {
                        for ai in 0..a {
                            for ci in 0..c {
                                for i in 0..kernel {
                                    dxs[(ci * a + ai) * b + p * stride + i] +=
                                        gv[[p, ai, ci * kernel + i]];
                                }
                            }
                        }
                    }
                }
                vec![dx]
            }),
        )
    }

    /// Overlap-add the windows produced by [`Self::unfold_last`] back to
    /// `[C, A, out_b]`; the adjoint of `unfold_last`.
    pub fn fold_last(&mut self, y: Tensor, kernel: usize, stride: usize, out_b: usize) -> Tensor {
        let yv = self.rc_value(y);
        assert_eq!(yv.ndim(), 3, "fold_last: input must be [S,A,C*k]");
        let (s, a, ck) = (yv.shape()[0], yv.shape()[1], yv.shape()[2]);
        assert_eq!(ck % kernel, 0, "fold_last: feature dim not divisible by kernel");
        let c = ck / kernel;
        assert!(
            (s - 1) * stride + kernel <= out_b,
            "fold_last: windows exceed output extent"
        );
        let ys = yv.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let mut value = ArrayD::<T>::zeros(IxDyn(&[c, a, out_b]));
        {
            let out = value.as_slice_mut().unwrap();
            for p in 0..s {
                for ai in 0..a {
                    for ci in 0..c {
                        for i in 0..kernel {
                            out[(ci * a + ai) * out_b + p * stride + i] +=
                                ys[[p, ai, ci * kernel + i]];
                        }
                    }
                }
            }
        }
        if !self.tracking(&[y]) {
            return self.push_node(value, vec![], None, None, false);
        }
        self.push_op(
            value,
            vec![y.0],
            Box::new(move |g| {
                let gv = g.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let mut dy = ArrayD::<T>::zeros(IxDyn(&[s, a, ck]));
                {
                    let dys = dy.as_slice_mut().unwrap();
                    for p in 0..s {
                        for ai in 0..a {
                            let base = (p * a + ai) * ck;
                            for ci in 0..c {
                                for i in 0..kernel {
                                    dys[base + ci * kernel + i] =
                                        gv[[ci, ai, p * stride + i]];
                                }
                            }
                        }
                    }
                }
                vec![dy]
            }),
        )
    }
}
