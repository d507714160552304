//! Complex-valued features on the tape, stored as separate real/imaginary
//! planes, plus the complex convolution layers built from four real
//! convolutions.

use ndarray::{Array2, ArrayD, IxDyn};

use crate::num::{Cplx, Scalar};

use super::params::{ParamBuilder, ParamId, ParamStore};
use super::tape::{Tape, Tensor};

/// Complex feature as a (real, imaginary) pair of equally shaped tensors.
#[derive(Debug, Clone, Copy)]
pub struct CTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl CTensor {
    /// Load a complex matrix as an untracked `[1,T,F]` complex feature.
    pub fn from_matrix<T: Scalar>(tape: &mut Tape<T>, m: &Array2<Cplx<T>>) -> Self {
        let (t, f) = m.dim();
        let mut re = ArrayD::<T>::zeros(IxDyn(&[1, t, f]));
        let mut im = ArrayD::<T>::zeros(IxDyn(&[1, t, f]));
        for ((r, c), v) in m.indexed_iter() {
            re[[0, r, c]] = v.re;
            im[[0, r, c]] = v.im;
        }
        Self {
            re: tape.constant(re),
            im: tape.constant(im),
        }
    }

    /// Extract a `[1,T,F]` complex feature back into a matrix.
    pub fn to_matrix<T: Scalar>(&self, tape: &Tape<T>) -> Array2<Cplx<T>> {
        let re = tape.value(self.re);
        let im = tape.value(self.im);
        assert_eq!(re.shape()[0], 1, "to_matrix expects a single channel");
        let (t, f) = (re.shape()[1], re.shape()[2]);
        Array2::from_shape_fn((t, f), |(r, c)| Cplx::new(re[[0, r, c]], im[[0, r, c]]))
    }

    /// Stack real and imaginary planes along the channel axis.
    pub fn stack_ri<T: Scalar>(&self, tape: &mut Tape<T>) -> Tensor {
        tape.concat(0, &[self.re, self.im])
    }

    /// Inverse of [`Self::stack_ri`].
    pub fn from_stacked<T: Scalar>(tape: &mut Tape<T>, x: Tensor) -> Self {
        let c = tape.shape(x)[0];
        assert_eq!(c % 2, 0, "stacked complex feature needs even channels");
        Self {
            re: tape.slice_axis(x, 0, 0, c / 2),
            im: tape.slice_axis(x, 0, c / 2, c / 2),
        }
    }

    pub fn add<T: Scalar>(&self, tape: &mut Tape<T>, other: CTensor) -> CTensor {
        CTensor {
            re: tape.add(self.re, other.re),
            im: tape.add(self.im, other.im),
        }
    }

    /// Elementwise complex product.
    pub fn mul<T: Scalar>(&self, tape: &mut Tape<T>, other: CTensor) -> CTensor {
        let rr = tape.mul(self.re, other.re);
        let ii = tape.mul(self.im, other.im);
        let ri = tape.mul(self.re, other.im);
        let ir = tape.mul(self.im, other.re);
        CTensor {
            re: tape.sub(rr, ii),
            im: tape.add(ri, ir),
        }
    }

    /// Mean of `|a - b|^2` over all entries.
    pub fn mse<T: Scalar>(&self, tape: &mut Tape<T>, other: CTensor) -> Tensor {
        let re = tape.mse(self.re, other.re);
        let im = tape.mse(self.im, other.im);
        tape.add(re, im)
    }

    pub fn concat_channels<T: Scalar>(tape: &mut Tape<T>, parts: &[CTensor]) -> CTensor {
        let res: Vec<Tensor> = parts.iter().map(|p| p.re).collect();
        let ims: Vec<Tensor> = parts.iter().map(|p| p.im).collect();
        CTensor {
            re: tape.concat(0, &res),
            im: tape.concat(0, &ims),
        }
    }
}

/// Complex 2-D convolution `(Er*Wr - Ei*Wi) + j(Er*Wi + Ei*Wr)` realized
/// with two real kernels.
#[derive(Debug, Clone)]
pub struct ComplexConv2d {
    w_re: ParamId,
    w_im: ParamId,
    b_re: Option<ParamId>,
    b_im: Option<ParamId>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ComplexConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        bias: bool,
    ) -> Self {
        let bound = 1.0 / ((2 * cin * kernel.0 * kernel.1) as f64).sqrt();
        pb.scoped(name, |pb| Self {
            w_re: pb.uniform("w_re", &[cout, cin, kernel.0, kernel.1], bound),
            w_im: pb.uniform("w_im", &[cout, cin, kernel.0, kernel.1], bound),
            b_re: bias.then(|| pb.uniform("b_re", &[cout], bound)),
            b_im: bias.then(|| pb.uniform("b_im", &[cout], bound)),
            stride,
            pad,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: CTensor) -> CTensor {
        let wr = tape.param(store, self.w_re);
        let wi = tape.param(store, self.w_im);
        let rr = tape.conv2d(x.re, wr, self.stride, self.pad);
        let ii = tape.conv2d(x.im, wi, self.stride, self.pad);
        let ri = tape.conv2d(x.re, wi, self.stride, self.pad);
        let ir = tape.conv2d(x.im, wr, self.stride, self.pad);
        let mut re = tape.sub(rr, ii);
        let mut im = tape.add(ri, ir);
        if let (Some(br), Some(bi)) = (self.b_re, self.b_im) {
            let br = tape.param(store, br);
            let bi = tape.param(store, bi);
            re = tape.add_bias(re, br, 0);
            im = tape.add_bias(im, bi, 0);
        }
        CTensor { re, im }
    }

    pub fn zero_out<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.value_mut(self.w_re).fill(T::zero());
        store.value_mut(self.w_im).fill(T::zero());
        if let Some(b) = self.b_re {
            store.value_mut(b).fill(T::zero());
        }
        if let Some(b) = self.b_im {
            store.value_mut(b).fill(T::zero());
        }
    }
}

/// Complex transposed 2-D convolution (same arithmetic with transposed
/// real kernels).
#[derive(Debug, Clone)]
pub struct ComplexConvTranspose2d {
    w_re: ParamId,
    w_im: ParamId,
    b_re: Option<ParamId>,
    b_im: Option<ParamId>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ComplexConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        bias: bool,
    ) -> Self {
        let bound = 1.0 / ((2 * cin * kernel.0 * kernel.1) as f64).sqrt();
        pb.scoped(name, |pb| Self {
            w_re: pb.uniform("w_re", &[cin, cout, kernel.0, kernel.1], bound),
            w_im: pb.uniform("w_im", &[cin, cout, kernel.0, kernel.1], bound),
            b_re: bias.then(|| pb.uniform("b_re", &[cout], bound)),
            b_im: bias.then(|| pb.uniform("b_im", &[cout], bound)),
            stride,
            pad,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: CTensor,
        out_hw: (usize, usize),
    ) -> CTensor {
        let wr = tape.param(store, self.w_re);
        let wi = tape.param(store, self.w_im);
        let rr = tape.conv2d_transpose(x.re, wr, self.stride, self.pad, out_hw);
        let ii = tape.conv2d_transpose(x.im, wi, self.stride, self.pad, out_hw);
        let ri = tape.conv2d_transpose(x.re, wi, self.stride, self.pad, out_hw);
        let ir = tape.conv2d_transpose(x.im, wr, self.stride, self.pad, out_hw);
        let mut re = tape.sub(rr, ii);
        let mut im = tape.add(ri, ir);
        if let (Some(br), Some(bi)) = (self.b_re, self.b_im) {
            let br = tape.param(store, br);
            let bi = tape.param(store, bi);
            re = tape.add_bias(re, br, 0);
            im = tape.add_bias(im, bi, 0);
        }
        CTensor { re, im }
    }
}
