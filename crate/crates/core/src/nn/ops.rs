//! Elementwise, shape, reduction, and matrix ops recorded on the tape.

use std::rc::Rc;

use ndarray::{ArrayD, Axis, Ix2, IxDyn, Slice};

use crate::num::Scalar;

use super::tape::{Tape, Tensor};

impl<T: Scalar> Tape<T> {
    fn push_untracked(&mut self, value: ArrayD<T>) -> Tensor {
        self.push_node(value, Vec::new(), None, None, false)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let av = self.rc_value(a);
        let bv = self.rc_value(b);
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
        let value = &*av + &*bv;
        if !self.tracking(&[a, b]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![a.0, b.0],
            Box::new(move |g| vec![g.clone(), g.clone()]),
        )
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let av = self.rc_value(a);
        let bv = self.rc_value(b);
        assert_eq!(av.shape(), bv.shape(), "sub: shape mismatch");
        let value = &*av - &*bv;
        if !self.tracking(&[a, b]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![a.0, b.0],
            Box::new(move |g| vec![g.clone(), g.mapv(|x| -x)]),
        )
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let av = self.rc_value(a);
        let bv = self.rc_value(b);
        assert_eq!(av.shape(), bv.shape(), "mul: shape mismatch");
        let value = &*av * &*bv;
        if !self.tracking(&[a, b]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![a.0, b.0],
            Box::new(move |g| vec![g * &*bv, g * &*av]),
        )
    }

    pub fn neg(&mut self, a: Tensor) -> Tensor {
        self.scale(a, -T::one())
    }

    pub fn scale(&mut self, a: Tensor, c: T) -> Tensor {
        let av = self.rc_value(a);
        let value = av.mapv(|x| x * c);
        if !self.tracking(&[a]) {
            return self.push_untracked(value);
        }
        self.push_op(value, vec![a.0], Box::new(move |g| vec![g.mapv(|x| x * c)]))
    }

    pub fn add_scalar(&mut self, a: Tensor, c: T) -> Tensor {
        let av = self.rc_value(a);
        let value = av.mapv(|x| x + c);
        if !self.tracking(&[a]) {
            return self.push_untracked(value);
        }
        self.push_op(value, vec![a.0], Box::new(move |g| vec![g.clone()]))
    }

    /// Broadcast `b` along `axis` of `a` and add.
    pub fn add_bias(&mut self, a: Tensor, b: Tensor, axis: usize) -> Tensor {
        let av = self.rc_value(a);
        let bv = self.rc_value(b);
        assert_eq!(bv.ndim(), 1, "add_bias: bias must be 1-D");
        assert_eq!(av.shape()[axis], bv.len(), "add_bias: axis extent mismatch");
        let mut value = (*av).clone();
        for (i, mut lane) in value.axis_iter_mut(Axis(axis)).enumerate() {
            let bi = bv[[i]];
            lane.mapv_inplace(|x| x + bi);
        }
        if !self.tracking(&[a, b]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![a.0, b.0],
            Box::new(move |g| {
                let db: Vec<T> = g
                    .axis_iter(Axis(axis))
                    .map(|lane| lane.iter().copied().sum())
                    .collect();
                vec![g.clone(), ArrayD::from_shape_vec(IxDyn(&[db.len()]), db).unwrap()]
            }),
        )
    }

    /// Per-index affine along `axis`: `y = x * scale[i] + shift[i]`.
    pub fn axis_affine(&mut self, x: Tensor, scale: Tensor, shift: Tensor, axis: usize) -> Tensor {
        let xv = self.rc_value(x);
        let sv = self.rc_value(scale);
        let hv = self.rc_value(shift);
        assert_eq!(sv.ndim(), 1, "axis_affine: scale must be 1-D");
        assert_eq!(sv.shape(), hv.shape(), "axis_affine: scale/shift mismatch");
        assert_eq!(xv.shape()[axis], sv.len(), "axis_affine: axis extent mismatch");
        let mut value = (*xv).clone();
        for (i, mut lane) in value.axis_iter_mut(Axis(axis)).enumerate() {
            let si = sv[[i]];
            let hi = hv[[i]];
            lane.mapv_inplace(|v| v * si + hi);
        }
        if !self.tracking(&[x, scale, shift]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![x.0, scale.0, shift.0],
            Box::new(move |g| {
                let mut dx = g.clone();
                for (i, mut lane) in dx.axis_iter_mut(Axis(axis)).enumerate() {
                    let si = sv[[i]];
                    lane.mapv_inplace(|v| v * si);
                }
                let n = sv.len();
                let mut ds = ArrayD::zeros(IxDyn(&[n]));
                let mut dh = ArrayD::zeros(IxDyn(&[n]));
                for i in 0..n {
                    let glane = g.index_axis(Axis(axis), i);
                    let xlane = xv.index_axis(Axis(axis), i);
                    let mut s_acc = T::zero();
                    let mut h_acc = T::zero();
                    for (gg, xx) in glane.iter().zip(xlane.iter()) {
                        s_acc += *gg * *xx;
                        h_acc += *gg;
                    }
                    ds[[i]] = s_acc;
                    dh[[i]] = h_acc;
                }
                vec![dx, ds, dh]
            }),
        )
    }

    /// PReLU with per-channel slope along `axis` 0.
    pub fn prelu(&mut self, x: Tensor, alpha: Tensor) -> Tensor {
        let xv = self.rc_value(x);
        let av = self.rc_value(alpha);
        assert_eq!(av.ndim(), 1, "prelu: alpha must be 1-D");
        assert_eq!(xv.shape()[0], av.len(), "prelu: channel extent mismatch");
        let mut value = (*xv).clone();
        for (c, mut lane) in value.axis_iter_mut(Axis(0)).enumerate() {
            let ac = av[[c]];
            lane.mapv_inplace(|v| if v > T::zero() { v } else { v * ac });
        }
        if !self.tracking(&[x, alpha]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![x.0, alpha.0],
            Box::new(move |g| {
                let mut dx = g.clone();
                let mut da = ArrayD::zeros(IxDyn(&[av.len()]));
                for c in 0..av.len() {
                    let ac = av[[c]];
                    let xlane = xv.index_axis(Axis(0), c);
                    let mut glane = dx.index_axis_mut(Axis(0), c);
                    let mut acc = T::zero();
                    ndarray::Zip::from(&mut glane).and(&xlane).for_each(|gg, xx| {
                        if *xx <= T::zero() {
                            acc += *gg * *xx;
                            *gg *= ac;
                        }
                    });
                    da[[c]] = acc;
                }
                vec![dx, da]
            }),
        )
    }

    /// SiLU (swish) activation `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Tensor) -> Tensor {
        let xv = self.rc_value(x);
        let sig = xv.mapv(|v| T::one() / (T::one() + (-v).exp()));
        let value = &*xv * &sig;
        if !self.tracking(&[x]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![x.0],
            Box::new(move |g| {
                let dx = ndarray::Zip::from(g)
                    .and(&*xv)
                    .and(&sig)
                    .map_collect(|gg, xx, ss| *gg * (*ss * (T::one() + *xx * (T::one() - *ss))));
                vec![dx]
            }),
        )
    }

    pub fn sum_all(&mut self, a: Tensor) -> Tensor {
        let av = self.rc_value(a);
        let s: T = av.iter().copied().sum();
        let value = ArrayD::from_elem(IxDyn(&[]), s);
        if !self.tracking(&[a]) {
            return self.push_untracked(value);
        }
        let shape: Vec<usize> = av.shape().to_vec();
        self.push_op(
            value,
            vec![a.0],
            Box::new(move |g| {
                let gv = *g.iter().next().unwrap();
                vec![ArrayD::from_elem(IxDyn(&shape), gv)]
            }),
        )
    }

    pub fn mean_all(&mut self, a: Tensor) -> Tensor {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, T::one() / T::cast(n as f64))
    }

    /// Mean squared difference, `mean((a - b)^2)`.
    pub fn mse(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// 2-D matrix product `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let av = self.rc_value(a);
        let bv = self.rc_value(b);
        assert_eq!(av.ndim(), 2, "matmul: lhs must be 2-D");
        assert_eq!(bv.ndim(), 2, "matmul: rhs must be 2-D");
        let a2 = av.view().into_dimensionality::<Ix2>().unwrap();
        let b2 = bv.view().into_dimensionality::<Ix2>().unwrap();
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dims mismatch");
        let value = a2.dot(&b2).into_dyn();
        if !self.tracking(&[a, b]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![a.0, b.0],
            Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a2 = av.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = bv.view().into_dimensionality::<Ix2>().unwrap();
                vec![g2.dot(&b2.t()).into_dyn(), a2.t().dot(&g2).into_dyn()]
            }),
        )
    }

    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Tensor {
        let av = self.rc_value(a);
        let value = av
            .view()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: incompatible shape or layout")
            .to_owned();
        if !self.tracking(&[a]) {
            return self.push_untracked(value);
        }
        let orig: Vec<usize> = av.shape().to_vec();
        self.push_op(
            value,
            vec![a.0],
            Box::new(move |g| {
                vec![g
                    .view()
                    .into_shape_with_order(IxDyn(&orig))
                    .expect("reshape backward")
                    .to_owned()]
            }),
        )
    }

    pub fn permute(&mut self, a: Tensor, axes: &[usize]) -> Tensor {
        let av = self.rc_value(a);
        assert_eq!(av.ndim(), axes.len(), "permute: axes arity mismatch");
        let value = av
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .into_owned();
        if !self.tracking(&[a]) {
            return self.push_untracked(value);
        }
        let mut inverse = vec![0usize; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.push_op(
            value,
            vec![a.0],
            Box::new(move |g| {
                vec![g
                    .view()
                    .permuted_axes(IxDyn(&inverse))
                    .as_standard_layout()
                    .into_owned()]
            }),
        )
    }

    pub fn slice_axis(&mut self, a: Tensor, axis: usize, start: usize, len: usize) -> Tensor {
        let av = self.rc_value(a);
        assert!(start + len <= av.shape()[axis], "slice_axis: out of range");
        let value = av
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        if !self.tracking(&[a]) {
            return self.push_untracked(value);
        }
        let shape: Vec<usize> = av.shape().to_vec();
        self.push_op(
            value,
            vec![a.0],
            Box::new(move |g| {
                let mut dx = ArrayD::<T>::zeros(IxDyn(&shape));
                dx.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                    .assign(g);
                vec![dx]
            }),
        )
    }

    /// Zero-pad along one axis.
    pub fn pad_axis(&mut self, a: Tensor, axis: usize, before: usize, after: usize) -> Tensor {
        let av = self.rc_value(a);
        let mut shape: Vec<usize> = av.shape().to_vec();
        let orig = shape[axis];
        shape[axis] = orig + before + after;
        let mut value = ArrayD::<T>::zeros(IxDyn(&shape));
        value
            .slice_axis_mut(Axis(axis), Slice::from(before..before + orig))
            .assign(&av);
        if !self.tracking(&[a]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![a.0],
            Box::new(move |g| {
                vec![g
                    .slice_axis(Axis(axis), Slice::from(before..before + orig))
                    .to_owned()]
            }),
        )
    }

    pub fn concat(&mut self, axis: usize, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat: no inputs");
        let views: Vec<_> = parts.iter().map(|t| self.rc_value(*t)).collect();
        let value = ndarray::concatenate(
            Axis(axis),
            &views.iter().map(|v| v.view()).collect::<Vec<_>>(),
        )
        .expect("concat: incompatible shapes");
        if !self.tracking(parts) {
            return self.push_untracked(value);
        }
        let extents: Vec<usize> = views.iter().map(|v| v.shape()[axis]).collect();
        self.push_op(
            value,
            parts.iter().map(|t| t.0).collect(),
            Box::new(move |g| {
                let mut out = Vec::with_capacity(extents.len());
                let mut offset = 0;
                for &e in &extents {
                    out.push(
                        g.slice_axis(Axis(axis), Slice::from(offset..offset + e))
                            .to_owned(),
                    );
                    offset += e;
                }
                out
            }),
        )
    }

    pub fn reverse_axis(&mut self, a: Tensor, axis: usize) -> Tensor {
        let av = self.rc_value(a);
        let value = av
            .slice_axis(Axis(axis), Slice::new(0, None, -1))
            .as_standard_layout()
            .into_owned();
        if !self.tracking(&[a]) {
            return self.push_untracked(value);
        }
        self.push_op(
            value,
            vec![a.0],
            Box::new(move |g| {
                vec![g
                    .slice_axis(Axis(axis), Slice::new(0, None, -1))
                    .as_standard_layout()
                    .into_owned()]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: Tensor) -> Tensor {
        let av = self.rc_value(a);
        let n = *av.shape().last().expect("softmax: 0-d input");
        let rows = av.len() / n;
        let flat = av
            .view()
            .into_shape_with_order(IxDyn(&[rows, n]))
            .expect("softmax reshape");
        let mut value = flat.to_owned();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = T::one() / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let value = value
            .into_shape_with_order(IxDyn(av.shape()))
            .expect("softmax reshape back");
        if !self.tracking(&[a]) {
            return self.push_untracked(value);
        }
        let y = Rc::new(value.clone());
        self.push_op(
            value,
            vec![a.0],
            Box::new(move |g| {
                let yv = y
                    .view()
                    .into_shape_with_order(IxDyn(&[rows, n]))
                    .unwrap();
                let gv = g.view().into_shape_with_order(IxDyn(&[rows, n])).unwrap();
                let mut dx = gv.to_owned();
                for (mut dxr, yr) in dx.rows_mut().into_iter().zip(yv.rows()) {
                    let dot: T = dxr.iter().zip(yr.iter()).map(|(a, b)| *a * *b).sum();
                    ndarray::Zip::from(&mut dxr).and(&yr).for_each(|d, yy| {
                        *d = (*d - dot) * *yy;
                    });
                }
                vec![dx.into_shape_with_order(IxDyn(y.shape())).unwrap()]
            }),
        )
    }
}
