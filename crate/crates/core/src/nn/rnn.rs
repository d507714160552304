//! Monolithic LSTM op with hand-rolled backpropagation through time.

use ndarray::{s, Array2, Array3, ArrayD, Ix2, IxDyn};

use crate::num::Scalar;

use super::tape::{Tape, Tensor};

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Scalar> Tape<T> {
    /// Unidirectional LSTM over `x [S,B,I]` with weights `w_ih [4H,I]`,
    /// `w_hh [4H,H]`, and `bias [4H]` (gate order i, f, g, o; zero initial
    /// state). Returns the hidden sequence `[S,B,H]`.
    pub fn lstm(&mut self, x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor {
        let xv = self.rc_value(x);
        let wiv = self.rc_value(w_ih);
        let whv = self.rc_value(w_hh);
        let bv = self.rc_value(bias);
        assert_eq!(xv.ndim(), 3, "lstm: input must be [S,B,I]");
        let (seq, batch, input) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert_eq!(wiv.ndim(), 2, "lstm: w_ih must be [4H,I]");
        let four_h = wiv.shape()[0];
        assert_eq!(four_h % 4, 0, "lstm: w_ih rows must be 4*H");
        let hidden = four_h / 4;
        assert_eq!(wiv.shape()[1], input, "lstm: w_ih input dim mismatch");
        assert_eq!(whv.shape(), &[four_h, hidden], "lstm: w_hh shape mismatch");
        assert_eq!(bv.len(), four_h, "lstm: bias length mismatch");

        let w_ih_t = wiv
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .t()
            .to_owned();
        let w_hh_t = whv
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .t()
            .to_owned();

        let mut gates_act = Array3::<T>::zeros((seq, batch, four_h));
        let mut c_seq = Array3::<T>::zeros((seq, batch, hidden));
        let mut h_seq = Array3::<T>::zeros((seq, batch, hidden));
        let mut h = Array2::<T>::zeros((batch, hidden));
        let mut c = Array2::<T>::zeros((batch, hidden));

        for step in 0..seq {
            let xs = xv
                .index_axis(ndarray::Axis(0), step)
                .into_dimensionality::<Ix2>()
                .unwrap();
            let mut gates = xs.dot(&w_ih_t) + h.dot(&w_hh_t);
            for mut row in gates.rows_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v += bv[[k]];
                }
            }
            for bi in 0..batch {
                for k in 0..hidden {
                    let ig = sigmoid(gates[[bi, k]]);
                    let fg = sigmoid(gates[[bi, hidden + k]]);
                    let gg = gates[[bi, 2 * hidden + k]].tanh();
                    let og = sigmoid(gates[[bi, 3 * hidden + k]]);
                    let cc = fg * c[[bi, k]] + ig * gg;
                    c[[bi, k]] = cc;
                    h[[bi, k]] = og * cc.tanh();
                    gates_act[[step, bi, k]] = ig;
                    gates_act[[step, bi, hidden + k]] = fg;
                    gates_act[[step, bi, 2 * hidden + k]] = gg;
                    gates_act[[step, bi, 3 * hidden + k]] = og;
                }
            }
            c_seq.slice_mut(s![step, .., ..]).assign(&c);
            h_seq.slice_mut(s![step, .., ..]).assign(&h);
        }

        let tracking = self.tracking(&[x, w_ih, w_hh, bias]);
        if !tracking {
            return self.push_node(h_seq.into_dyn(), vec![], None, None, false);
        }
        let h_saved = h_seq.clone();
        self.push_op(
            h_seq.into_dyn(),
            vec![x.0, w_ih.0, w_hh.0, bias.0],
            Box::new(move |grad| {
                let gv = grad.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let wi = wiv.view().into_dimensionality::<Ix2>().unwrap();
                let wh = whv.view().into_dimensionality::<Ix2>().unwrap();

                let mut dx = Array3::<T>::zeros((seq, batch, input));
                let mut dwi = Array2::<T>::zeros((four_h, input));
                let mut dwh = Array2::<T>::zeros((four_h, hidden));
                let mut db = vec![T::zero(); four_h];
                let mut dh_next = Array2::<T>::zeros((batch, hidden));
                let mut dc_next = Array2::<T>::zeros((batch, hidden));
                let mut dgates = Array2::<T>::zeros((batch, four_h));

                for step in (0..seq).rev() {
                    for bi in 0..batch {
                        for k in 0..hidden {
                            let ig = gates_act[[step, bi, k]];
                            let fg = gates_act[[step, bi, hidden + k]];
                            let gg = gates_act[[step, bi, 2 * hidden + k]];
                            let og = gates_act[[step, bi, 3 * hidden + k]];
                            let cc = c_seq[[step, bi, k]];
                            let c_prev = if step > 0 {
                                c_seq[[step - 1, bi, k]]
                            } else {
                                T::zero()
                            };
                            let tc = cc.tanh();
                            let dh = gv[[step, bi, k]] + dh_next[[bi, k]];
                            let dth = dh * og;
                            let dc = dth * (T::one() - tc * tc) + dc_next[[bi, k]];
                            let do_ = dh * tc;
                            let di = dc * gg;
                            let dg = dc * ig;
                            let df = dc * c_prev;
                            dc_next[[bi, k]] = dc * fg;
                            dgates[[bi, k]] = di * ig * (T::one() - ig);
                            dgates[[bi, hidden + k]] = df * fg * (T::one() - fg);
                            dgates[[bi, 2 * hidden + k]] = dg * (T::one() - gg * gg);
                            dgates[[bi, 3 * hidden + k]] = do_ * og * (T::one() - og);
                        }
                    }
                    let xs = xv
                        .index_axis(ndarray::Axis(0), step)
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    dx.slice_mut(s![step, .., ..]).assign(&dgates.dot(&wi));
                    dh_next = dgates.dot(&wh);
                    dwi = dwi + dgates.t().dot(&xs);
                    if step > 0 {
                        let h_prev = h_saved.slice(s![step - 1, .., ..]);
                        dwh = dwh + dgates.t().dot(&h_prev);
                    }
                    for bi in 0..batch {
                        for k in 0..four_h {
                            db[k] += dgates[[bi, k]];
                        }
                    }
                }
                let db = ArrayD::from_shape_vec(IxDyn(&[four_h]), db).unwrap();
                vec![dx.into_dyn(), dwi.into_dyn(), dwh.into_dyn(), db]
            }),
        )
    }
}
