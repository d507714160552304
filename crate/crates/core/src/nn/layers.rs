//! Parameterized layer wrappers: each holds [`ParamId`]s registered through
//! a [`ParamBuilder`] and replays itself onto a [`Tape`] at forward time.


use crate::num::Scalar;

use super::norm::NormMode;
use super::params::{ParamBuilder, ParamId, ParamStore};
use super::tape::{Tape, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// Fully connected layer applied to the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        pb.scoped(name, |pb| Self {
            w: pb.uniform("w", &[out_dim, in_dim], bound),
            b: bias.then(|| pb.uniform("b", &[out_dim], bound)),
            in_dim,
            out_dim,
        })
    }

    /// `x [..., I] -> [..., O]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Tensor) -> Tensor {
        let shape: Vec<usize> = tape.shape(x).to_vec();
        assert_eq!(*shape.last().unwrap(), self.in_dim, "linear input dim");
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = tape.reshape(x, &[rows, self.in_dim]);
        let w = tape.param(store, self.w);
        let wt = tape.permute(w, &[1, 0]);
        let mut y = tape.matmul(flat, wt);
        if let Some(b) = self.b {
            let b = tape.param(store, b);
            y = tape.add_bias(y, b, 1);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        tape.reshape(y, &out_shape)
    }

    /// Zero all parameters (turns residual blocks into the identity).
    pub fn zero_out<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.value_mut(self.w).fill(T::zero());
        if let Some(b) = self.b {
            store.value_mut(b).fill(T::zero());
        }
    }
}

/// 2-D convolution layer over `[C,T,F]` maps.
#[derive(Debug, Clone)]
pub struct Conv2d {
    w: ParamId,
    b: Option<ParamId>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2d {
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
        let bound = 1.0 / ((cin * kernel.0 * kernel.1) as f64).sqrt();
        pb.scoped(name, |pb| Self {
            w: pb.uniform("w", &[cout, cin, kernel.0, kernel.1], bound),
            b: bias.then(|| pb.uniform("b", &[cout], bound)),
            stride,
            pad,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Tensor) -> Tensor {
        let w = tape.param(store, self.w);
        let mut y = tape.conv2d(x, w, self.stride, self.pad);
        if let Some(b) = self.b {
            let b = tape.param(store, b);
            y = tape.add_bias(y, b, 0);
        }
        y
    }

    pub fn zero_out<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.value_mut(self.w).fill(T::zero());
        if let Some(b) = self.b {
            store.value_mut(b).fill(T::zero());
        }
    }
}

/// Transposed 2-D convolution layer; output extent supplied at forward time.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    w: ParamId,
    b: Option<ParamId>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvTranspose2d {
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
        let bound = 1.0 / ((cin * kernel.0 * kernel.1) as f64).sqrt();
        pb.scoped(name, |pb| Self {
            w: pb.uniform("w", &[cin, cout, kernel.0, kernel.1], bound),
            b: bias.then(|| pb.uniform("b", &[cout], bound)),
            stride,
            pad,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Tensor,
        out_hw: (usize, usize),
    ) -> Tensor {
        let w = tape.param(store, self.w);
        let mut y = tape.conv2d_transpose(x, w, self.stride, self.pad, out_hw);
        if let Some(b) = self.b {
            let b = tape.param(store, b);
            y = tape.add_bias(y, b, 0);
        }
        y
    }
}

/// Grouped normalization with per-channel affine.
#[derive(Debug, Clone)]
pub struct NormLayer {
    gamma: ParamId,
    beta: ParamId,
    pub mode: NormMode,
}

impl NormLayer {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        mode: NormMode,
    ) -> Self {
        pb.scoped(name, |pb| Self {
            gamma: pb.full("gamma", &[channels], 1.0),
            beta: pb.zeros("beta", &[channels]),
            mode,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Tensor) -> Tensor {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        tape.norm_affine(x, gamma, beta, self.mode, T::cast(LAYER_NORM_EPS))
    }
}

/// PReLU with per-channel slope.
#[derive(Debug, Clone)]
pub struct Prelu {
    alpha: ParamId,
}

impl Prelu {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Self {
        pb.scoped(name, |pb| Self {
            alpha: pb.full("alpha", &[channels], PRELU_INIT_SLOPE),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Tensor) -> Tensor {
        let alpha = tape.param(store, self.alpha);
        tape.prelu(x, alpha)
    }
}

/// Single-direction LSTM layer.
#[derive(Debug, Clone)]
pub struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        pb.scoped(name, |pb| Self {
            w_ih: pb.uniform("w_ih", &[4 * hidden, input], bound),
            w_hh: pb.uniform("w_hh", &[4 * hidden, hidden], bound),
            bias: pb.uniform("b", &[4 * hidden], bound),
            hidden,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Tensor) -> Tensor {
        let w_ih = tape.param(store, self.w_ih);
        let w_hh = tape.param(store, self.w_hh);
        let bias = tape.param(store, self.bias);
        tape.lstm(x, w_ih, w_hh, bias)
    }
}

/// Bidirectional LSTM: forward and time-reversed passes concatenated along
/// the feature axis, `[S,B,I] -> [S,B,2H]`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        pb.scoped(name, |pb| Self {
            fwd: Lstm::new(pb, "fwd", input, hidden),
            bwd: Lstm::new(pb, "bwd", input, hidden),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Tensor) -> Tensor {
        let a = self.fwd.forward(tape, store, x);
        let rev = tape.reverse_axis(x, 0);
        let b = self.bwd.forward(tape, store, rev);
        let b = tape.reverse_axis(b, 0);
        tape.concat(2, &[a, b])
    }
}
