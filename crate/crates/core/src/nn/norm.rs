//! Grouped normalization with per-channel affine over `[C,T,F]` tensors.

use ndarray::{ArrayD, IxDyn};

use crate::num::Scalar;

use super::tape::{Tape, Tensor};

/// Which extents form a normalization group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize over channels, one group per (t, f) bin.
    Channel,
    /// Normalize over channels and frequency, one group per frame.
    ChannelFreq,
    /// Normalize over time and frequency, one group per channel.
    TimeFreq,
}

/// (group count, group size, element indices of group g)
struct Grouping {
    mode: NormMode,
    c: usize,
    t: usize,
    f: usize,
}

impl Grouping {
    fn n_groups(&self) -> usize {
        match self.mode {
            NormMode::Channel => self.t * self.f,
            NormMode::ChannelFreq => self.t,
            NormMode::TimeFreq => self.c,
        }
    }

    fn group_size(&self) -> usize {
        match self.mode {
            NormMode::Channel => self.c,
            NormMode::ChannelFreq => self.c * self.f,
            NormMode::TimeFreq => self.t * self.f,
        }
    }

    /// Visit every element of group `g` as (flat index, channel).
    fn for_each(&self, g: usize, mut visit: impl FnMut(usize, usize)) {
        let (c, t, f) = (self.c, self.t, self.f);
        match self.mode {
            NormMode::Channel => {
                let (ti, fi) = (g / f, g % f);
                for ci in 0..c {
                    visit((ci * t + ti) * f + fi, ci);
                }
            }
            NormMode::ChannelFreq => {
                for ci in 0..c {
                    let base = (ci * t + g) * f;
                    for fi in 0..f {
                        visit(base + fi, ci);
                    }
                }
            }
            NormMode::TimeFreq => {
                let base = g * t * f;
                for i in 0..t * f {
                    visit(base + i, g);
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Normalize `x [C,T,F]` per [`NormMode`] group to zero mean / unit
    /// variance and apply a per-channel affine `gamma, beta [C]`.
    pub fn norm_affine(
        &mut self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mode: NormMode,
        eps: T,
    ) -> Tensor {
        let xv = self.rc_value(x);
        let gv = self.rc_value(gamma);
        let bv = self.rc_value(beta);
        assert_eq!(xv.ndim(), 3, "norm_affine: input must be [C,T,F]");
        let (c, t, f) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert_eq!(gv.len(), c, "norm_affine: gamma length mismatch");
        assert_eq!(bv.len(), c, "norm_affine: beta length mismatch");

        let grouping = Grouping { mode, c, t, f };
        let n_groups = grouping.n_groups();
        let n = grouping.group_size();
        let n_t = T::cast(n as f64);

        let xs = xv.as_slice().expect("norm_affine: standard layout");
        let gs = gv.as_slice().unwrap();
        let bs = bv.as_slice().unwrap();

        let mut mean = vec![T::zero(); n_groups];
        let mut invstd = vec![T::zero(); n_groups];
        let mut value = ArrayD::<T>::zeros(IxDyn(&[c, t, f]));
        {
            let out = value.as_slice_mut().unwrap();
            for g in 0..n_groups {
                let mut sum = T::zero();
                let mut sq = T::zero();
                grouping.for_each(g, |idx, _| {
                    let v = xs[idx];
                    sum += v;
                    sq += v * v;
                });
                let mu = sum / n_t;
                let var = (sq / n_t - mu * mu).max(T::zero());
                let is = T::one() / (var + eps).sqrt();
                mean[g] = mu;
                invstd[g] = is;
                grouping.for_each(g, |idx, ci| {
                    out[idx] = gs[ci] * (xs[idx] - mu) * is + bs[ci];
                });
            }
        }

        if !self.tracking(&[x, gamma, beta]) {
            return self.push_node(value, vec![], None, None, false);
        }
        self.push_op(
            value,
            vec![x.0, gamma.0, beta.0],
            Box::new(move |g| {
                let gslice = g.as_slice().expect("norm_affine backward layout");
                let xs = xv.as_slice().unwrap();
                let gs = gv.as_slice().unwrap();
                let mut dx = ArrayD::<T>::zeros(IxDyn(&[c, t, f]));
                let mut dgamma = ArrayD::<T>::zeros(IxDyn(&[c]));
                let mut dbeta = ArrayD::<T>::zeros(IxDyn(&[c]));
                {
                    let dxs = dx.as_slice_mut().unwrap();
                    let dgs = dgamma.as_slice_mut().unwrap();
                    let dbs = dbeta.as_slice_mut().unwrap();
                    let grouping = Grouping { mode, c, t, f };
                    for grp in 0..grouping.n_groups() {
                        let mu = mean[grp];
                        let is = invstd[grp];
                        let mut a = T::zero();
                        let mut b = T::zero();
                        grouping.for_each(grp, |idx, ci| {
                            let xhat = (xs[idx] - mu) * is;
                            let gg = gslice[idx];
                            dgs[ci] += gg * xhat;
                            dbs[ci] += gg;
                            let u = gg * gs[ci];
                            a += u;
                            b += u * xhat;
                        });
                        a /= n_t;
                        b /= n_t;
                        grouping.for_each(grp, |idx, ci| {
                            let xhat = (xs[idx] - mu) * is;
                            let u = gslice[idx] * gs[ci];
                            dxs[idx] = is * (u - a - xhat * b);
                        });
                    }
                }
                vec![dx, dgamma, dbeta]
            }),
        )
    }
}
