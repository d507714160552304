//! Named parameter storage, seeded initialization, and the Adam optimizer.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::num::Scalar;

/// Slot handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct ParamEntry<T: Scalar> {
    name: String,
    value: ArrayD<T>,
    trainable: bool,
}

/// Flat store of named parameter tensors. Registration order is the
/// architecture's identity: checkpoints address parameters by name.
pub struct ParamStore<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: ArrayD<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: ArrayD<T>) {
        assert_eq!(
            self.entries[id.0].value.shape(),
            value.shape(),
            "parameter {} shape change",
            self.entries[id.0].name
        );
        self.entries[id.0].value = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total trainable scalar count.
    pub fn n_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Trainable scalar count for parameters whose name starts with `prefix`.
    pub fn n_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && e.name.starts_with(prefix))
            .map(|e| e.value.len())
            .sum()
    }

    /// Order-sensitive digest of every parameter's bits; used to assert that
    /// a training stage left another stage's weights untouched.
    pub fn content_digest(&self) -> u64 {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        for e in &self.entries {
            e.name.hash(&mut hasher);
            for v in e.value.iter() {
                v.to_f64().unwrap_or(f64::NAN).to_bits().hash(&mut hasher);
            }
        }
        hasher.finish()
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Scoped, seeded registration helper used by layer constructors.
pub struct ParamBuilder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix.join("."), name)
        }
    }

    /// Run `f` with `seg` pushed onto the name prefix.
    pub fn scoped<R>(&mut self, seg: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(seg.into());
        let out = f(self);
        self.prefix.pop();
        out
    }

    /// Uniform init on `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let mut value = ArrayD::zeros(IxDyn(shape));
        for v in value.iter_mut() {
            *v = T::cast(self.rng.gen_range(-bound..bound));
        }
        self.store.register(self.full_name(name), value, true)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store
            .register(self.full_name(name), ArrayD::zeros(IxDyn(shape)), true)
    }

    pub fn full(&mut self, name: &str, shape: &[usize], fill: f64) -> ParamId {
        self.store.register(
            self.full_name(name),
            ArrayD::from_elem(IxDyn(shape), T::cast(fill)),
            true,
        )
    }

    /// Frozen (non-trainable) buffer with N(0, scale^2) entries.
    pub fn frozen_normal(&mut self, name: &str, shape: &[usize], scale: f64) -> ParamId {
        let mut value = ArrayD::zeros(IxDyn(shape));
        for v in value.iter_mut() {
            *v = T::cast(scale) * T::standard_normal(&mut self.rng);
        }
        self.store.register(self.full_name(name), value, false)
    }

    pub fn store(&mut self) -> &mut ParamStore<T> {
        self.store
    }
}

/// Adam configuration.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// Global gradient-norm clip.
    pub clip: Option<T>,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        Self {
            lr,
            beta1: T::cast(0.9),
            beta2: T::cast(0.999),
            eps: T::cast(1e-8),
            clip: Some(T::cast(5.0)),
        }
    }
}

/// Adam optimizer with optional global-norm gradient clipping.
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig<T>,
    step: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig<T>) -> Self {
        let m = store
            .ids()
            .map(|id| ArrayD::zeros(store.value(id).shape()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Self {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from gradients indexed by [`ParamId`]. Non-trainable
    /// entries and absent gradients are skipped.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<ArrayD<T>>]) {
        let scale = match self.cfg.clip {
            Some(clip) => {
                let mut sq = T::zero();
                for (id, g) in store.ids().zip(grads.iter()) {
                    if !store.is_trainable(id) {
                        continue;
                    }
                    if let Some(g) = g {
                        sq += g.iter().map(|x| *x * *x).sum();
                    }
                }
                let norm = sq.sqrt();
                if norm > clip {
                    clip / norm
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };

        self.step += 1;
        let t = T::cast(self.step as f64);
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = T::one() - b1.powf(t);
        let bias2 = T::one() - b2.powf(t);
        let lr = self.cfg.lr;
        let eps = self.cfg.eps;

        let ids: Vec<ParamId> = store.ids().collect();
        for (idx, id) in ids.into_iter().enumerate() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = &grads[idx] else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let value = store.value_mut(id);
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, g| {
                    let g = *g * scale;
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }

    /// Optimizer state for checkpointing: (step, first and second moments).
    pub fn state(&self) -> (u64, &[ArrayD<T>], &[ArrayD<T>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore_state(&mut self, step: u64, m: Vec<ArrayD<T>>, v: Vec<ArrayD<T>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.step = step;
        self.m = m;
        self.v = v;
    }
}
