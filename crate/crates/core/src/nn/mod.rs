//! Minimal reverse-mode autodiff over `ndarray` tensors plus the layer
//! primitives the enhancer and score networks are assembled from.
//!
//! Conventions: feature maps are `[C, T, F]` (channels, frames, frequency),
//! recurrent sequences are `[S, B, I]`, and complex features are
//! real/imaginary plane pairs ([`CTensor`]).

mod complex;
mod conv;
pub mod gradcheck;
mod layers;
mod norm;
mod ops;
mod params;
mod rnn;
mod tape;

pub use complex::{CTensor, ComplexConv2d, ComplexConvTranspose2d};
pub use conv::conv_out_extent;
pub use layers::{
    BiLstm, Conv2d, ConvTranspose2d, Linear, Lstm, NormLayer, Prelu, LAYER_NORM_EPS,
    PRELU_INIT_SLOPE,
};
pub use norm::NormMode;
pub use params::{Adam, AdamConfig, ParamBuilder, ParamId, ParamStore};
pub use tape::{Grads, Tape, Tensor};

#[cfg(test)]
mod tests {
    use super::gradcheck::finite_diff_check;
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_arr(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = ArrayD::zeros(IxDyn(shape));
        for v in a.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        a
    }

    /// FD-check a scalar loss built from a single "input" parameter.
    fn check_unary(shape: &[usize], f: impl Fn(&mut Tape<f64>, Tensor) -> Tensor) {
        let mut store = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 7);
        let x = pb.uniform("x", shape, 1.0);
        let target = random_arr(&[1], 3)[[0]];
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let xv = tape.param(store, x);
                let y = f(tape, xv);
                let m = tape.mean_all(y);
                let t = tape.add_scalar(m, -target);
                tape.mul(t, t)
            },
            1e-5,
            24,
            11,
        );
        report.assert_within(1e-5);
    }

    #[test]
    fn elementwise_grads() {
        check_unary(&[3, 4], |t, x| {
            let y = t.scale(x, 1.7);
            let z = t.add_scalar(y, 0.3);
            let w = t.mul(z, x);
            t.sub(w, x)
        });
        check_unary(&[2, 3, 4], |t, x| t.silu(x));
        check_unary(&[6], |t, x| t.softmax_last(x));
        check_unary(&[3, 5], |t, x| t.softmax_last(x));
    }

    #[test]
    fn shape_op_grads() {
        check_unary(&[3, 4, 5], |t, x| {
            let y = t.permute(x, &[2, 0, 1]);
            let y = t.reshape(y, &[5, 12]);
            let y = t.slice_axis(y, 0, 1, 3);
            let y = t.pad_axis(y, 1, 2, 1);
            t.reverse_axis(y, 0)
        });
        check_unary(&[2, 3], |t, x| {
            let y = t.scale(x, 0.5);
            t.concat(0, &[x, y])
        });
    }

    #[test]
    fn bias_affine_prelu_grads() {
        let mut store = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 8);
        let x = pb.uniform("x", &[3, 4, 2], 1.0);
        let b = pb.uniform("b", &[3], 1.0);
        let s = pb.uniform("s", &[3], 1.0);
        let h = pb.uniform("h", &[3], 1.0);
        let a = pb.full("alpha", &[3], 0.25);
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let xv = tape.param(store, x);
                let bv = tape.param(store, b);
                let sv = tape.param(store, s);
                let hv = tape.param(store, h);
                let av = tape.param(store, a);
                let y = tape.add_bias(xv, bv, 0);
                let y = tape.axis_affine(y, sv, hv, 0);
                let y = tape.prelu(y, av);
                tape.mean_all(y)
            },
            1e-5,
            24,
            12,
        );
        report.assert_within(1e-5);
    }

    #[test]
    fn matmul_grads() {
        let mut store = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 9);
        let a = pb.uniform("a", &[3, 4], 1.0);
        let b = pb.uniform("b", &[4, 5], 1.0);
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let av = tape.param(store, a);
                let bv = tape.param(store, b);
                let y = tape.matmul(av, bv);
                let sq = tape.mul(y, y);
                tape.mean_all(sq)
            },
            1e-5,
            20,
            13,
        );
        report.assert_within(1e-5);
    }

    #[test]
    fn norm_affine_grads() {
        for mode in [NormMode::Channel, NormMode::ChannelFreq, NormMode::TimeFreq] {
            let mut store = ParamStore::<f64>::new();
            let mut pb = ParamBuilder::new(&mut store, 10);
            let x = pb.uniform("x", &[3, 4, 5], 1.0);
            let g = pb.uniform("gamma", &[3], 1.0);
            let b = pb.uniform("beta", &[3], 1.0);
            let report = finite_diff_check(
                &mut store,
                |tape, store| {
                    let xv = tape.param(store, x);
                    let gv = tape.param(store, g);
                    let bv = tape.param(store, b);
                    let y = tape.norm_affine(xv, gv, bv, mode, 1e-5);
                    let sq = tape.mul(y, y);
                    tape.mean_all(sq)
                },
                1e-5,
                30,
                14,
            );
            report.assert_within(1e-4);
        }
    }

    #[test]
    fn conv2d_grads() {
        for (stride, pad) in [((1, 1), (1, 1)), ((2, 1), (2, 0)), ((2, 2), (1, 1))] {
            let mut store = ParamStore::<f64>::new();
            let mut pb = ParamBuilder::new(&mut store, 15);
            let x = pb.uniform("x", &[2, 6, 7], 1.0);
            let w = pb.uniform("w", &[3, 2, 3, 2], 1.0);
            let report = finite_diff_check(
                &mut store,
                |tape, store| {
                    let xv = tape.param(store, x);
                    let wv = tape.param(store, w);
                    let y = tape.conv2d(xv, wv, stride, pad);
                    let sq = tape.mul(y, y);
                    tape.mean_all(sq)
                },
                1e-5,
                30,
                16,
            );
            report.assert_within(1e-5);
        }
    }

    #[test]
    fn conv2d_transpose_grads_and_inverse_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 17);
        let x = pb.uniform("x", &[3, 4, 5], 1.0);
        let w = pb.uniform("w", &[3, 2, 3, 4], 1.0);
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let xv = tape.param(store, x);
                let wv = tape.param(store, w);
                let y = tape.conv2d_transpose(xv, wv, (1, 2), (1, 1), (4, 10));
                let sq = tape.mul(y, y);
                tape.mean_all(sq)
            },
            1e-5,
            30,
            18,
        );
        report.assert_within(1e-5);
        // Frequency halving then doubling restores the extent for odd F.
        let mut tape = Tape::<f64>::no_grad();
        let x = tape.constant(random_arr(&[1, 3, 129], 1));
        let w = tape.constant(random_arr(&[1, 1, 1, 5], 2));
        let y = tape.conv2d(x, w, (1, 2), (0, 2));
        assert_eq!(tape.shape(y), &[1, 3, 65]);
        let wt = tape.constant(random_arr(&[1, 1, 1, 5], 3));
        let z = tape.conv2d_transpose(y, wt, (1, 2), (0, 2), (3, 129));
        assert_eq!(tape.shape(z), &[1, 3, 129]);
    }

    #[test]
    fn unfold_fold_grads_and_shapes() {
        let mut store = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 19);
        let x = pb.uniform("x", &[2, 3, 9], 1.0);
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let xv = tape.param(store, x);
                let u = tape.unfold_last(xv, 3, 2);
                let f = tape.fold_last(u, 3, 2, 9);
                let sq = tape.mul(f, f);
                tape.mean_all(sq)
            },
            1e-5,
            30,
            20,
        );
        report.assert_within(1e-5);
        // unfold shape: (9 - 3) / 2 + 1 = 4 windows of 2*3 features.
        let mut tape = Tape::<f64>::no_grad();
        let xv = tape.constant(random_arr(&[2, 3, 9], 5));
        let u = tape.unfold_last(xv, 3, 2);
        assert_eq!(tape.shape(u), &[4, 3, 6]);
    }

    #[test]
    fn lstm_grads() {
        let mut store = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 21);
        let x = pb.uniform("x", &[4, 2, 3], 1.0);
        let lstm = Lstm::new(&mut pb, "lstm", 3, 5);
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let xv = tape.param(store, x);
                let y = lstm.forward(tape, store, xv);
                let sq = tape.mul(y, y);
                tape.mean_all(sq)
            },
            1e-5,
            40,
            22,
        );
        report.assert_within(1e-4);
    }

    #[test]
    fn bilstm_and_linear_grads() {
        let mut store = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 23);
        let x = pb.uniform("x", &[3, 2, 4], 1.0);
        let bilstm = BiLstm::new(&mut pb, "bi", 4, 3);
        let lin = Linear::new(&mut pb, "lin", 6, 2, true);
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let xv = tape.param(store, x);
                let y = bilstm.forward(tape, store, xv);
                let y = lin.forward(tape, store, y);
                let sq = tape.mul(y, y);
                tape.mean_all(sq)
            },
            1e-5,
            30,
            24,
        );
        report.assert_within(1e-4);
    }

    #[test]
    fn complex_conv_grads() {
        let mut store = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 25);
        let re = pb.uniform("re", &[2, 4, 5], 1.0);
        let im = pb.uniform("im", &[2, 4, 5], 1.0);
        let conv = ComplexConv2d::new(&mut pb, "cc", 2, 3, (2, 3), (1, 1), (1, 1), true);
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let x = CTensor {
                    re: tape.param(store, re),
                    im: tape.param(store, im),
                };
                let y = conv.forward(tape, store, x);
                let sr = tape.mul(y.re, y.re);
                let si = tape.mul(y.im, y.im);
                let s = tape.add(sr, si);
                tape.mean_all(s)
            },
            1e-5,
            30,
            26,
        );
        report.assert_within(1e-5);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let mut pb = ParamBuilder::new(&mut store, 27);
        let w = pb.uniform("w", &[4], 1.0);
        let mut adam = Adam::new(&store, AdamConfig::with_lr(0.05));
        for _ in 0..400 {
            let mut tape = Tape::new();
            let wv = tape.param(&store, w);
            let t = tape.add_scalar(wv, -3.0);
            let sq = tape.mul(t, t);
            let loss = tape.mean_all(sq);
            let grads = tape.backward(loss);
            let pg = tape.param_grads(&grads, store.len());
            adam.step(&mut store, &pg);
        }
        for v in store.value(w).iter() {
            assert!((v - 3.0).abs() < 1e-2, "adam did not converge: {v}");
        }
    }

    #[test]
    fn leaf_gradients_flow() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(random_arr(&[3], 4));
        let y = tape.mul(x, x);
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss);
        let gx = grads.wrt(x).unwrap();
        for (g, v) in gx.iter().zip(tape.value(x).iter()) {
            assert!((g - 2.0 * v).abs() < 1e-12);
        }
    }
}
