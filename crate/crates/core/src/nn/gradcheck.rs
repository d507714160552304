//! Central-finite-difference verification of tape gradients. The finite
//! differences are the independent oracle; the tape's reverse pass is the
//! implementation under test.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::num::Scalar;

use super::params::ParamStore;
use super::tape::{Tape, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub n_checked: usize,
    pub worst: String,
}

impl GradCheckReport {
    pub fn assert_within(&self, tol: f64) {
        assert!(
            self.max_rel_err < tol,
            "gradient check failed: max rel err {} >= {tol} at {} ({} coords)",
            self.max_rel_err,
            self.worst,
            self.n_checked
        );
    }
}

/// Compare tape gradients of `loss_fn` against central finite differences
/// on up to `max_coords_per_param` randomly chosen coordinates of every
/// trainable parameter. `loss_fn` must be deterministic.
pub fn finite_diff_check<T: Scalar>(
    store: &mut ParamStore<T>,
    mut loss_fn: impl FnMut(&mut Tape<T>, &ParamStore<T>) -> Tensor,
    step: T,
    max_coords_per_param: usize,
    seed: u64,
) -> GradCheckReport {
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store);
    let grads = tape.backward(loss);
    let param_grads = tape.param_grads(&grads, store.len());

    let mut eval = |store: &ParamStore<T>| -> f64 {
        let mut tape = Tape::no_grad();
        let loss = loss_fn(&mut tape, store);
        tape.value(loss).iter().next().unwrap().to_f64().unwrap()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        n_checked: 0,
        worst: String::new(),
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.is_trainable(id) {
            continue;
        }
        let Some(analytic) = param_grads[id.index()].clone() else {
            continue;
        };
        let len = store.value(id).len();
        let mut coords: Vec<usize> = (0..len).collect();
        coords.shuffle(&mut rng);
        coords.truncate(max_coords_per_param);
        for coord in coords {
            let orig = store.value(id).as_slice().unwrap()[coord];
            store.value_mut(id).as_slice_mut().unwrap()[coord] = orig + step;
            let plus = eval(store);
            store.value_mut(id).as_slice_mut().unwrap()[coord] = orig - step;
            let minus = eval(store);
            store.value_mut(id).as_slice_mut().unwrap()[coord] = orig;

            let fd = (plus - minus) / (2.0 * step.to_f64().unwrap());
            let a = analytic.as_slice().unwrap()[coord].to_f64().unwrap();
            let denom = a.abs().max(fd.abs()).max(1e-6);
            let rel = (a - fd).abs() / denom;
            report.n_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!(
                    "{}[{coord}]: analytic {a:.6e} vs fd {fd:.6e}",
                    store.name(id)
                );
            }
        }
    }
    report
}
