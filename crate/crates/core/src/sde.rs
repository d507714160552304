//! Forward/reverse stochastic differential equation, perturbation-kernel
//! sampling, score-loss targets, predictor-corrector reverse solver, and
//! Brownian-trajectory ensembling.
//!
//! The SDE is an Ornstein-Uhlenbeck drift toward the conditioning feature
//! with a variance-exploding diffusion term:
//!
//! ```text
//! dx_t = gamma * (y - x_t) dt + g(t) dw
//! g(t) = sigma_min * (sigma_max / sigma_min)^t * sqrt(2 ln(sigma_max / sigma_min))
//! ```
//!
//! States are complex-valued. Complex white noise is circularly symmetric
//! with unit power, `E|z|^2 = 1` (real and imaginary parts each N(0, 1/2)),
//! and `sigma(t)^2` below is the complex variance `E|x_t - mean|^2`.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{Cplx, Scalar};
use crate::spectral::ComplexSpectrogram;

/// SDE coefficients and reverse-discretization settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SdeParams<T> {
    /// Drift stiffness toward the conditioning feature.
    pub gamma: T,
    pub sigma_min: T,
    pub sigma_max: T,
    /// Terminal process time.
    pub t_max: T,
    /// Number of discretization steps N.
    pub n_steps: usize,
    /// Mid-state start step K (reverse sampling begins at K * t_max / N).
    pub start_step: usize,
    /// Reverse iteration stops at this time instead of 0.
    pub t_eps: T,
}

impl<T: Scalar> Default for SdeParams<T> {
    fn default() -> Self {
        Self {
            gamma: T::cast(1.5),
            sigma_min: T::cast(0.05),
            sigma_max: T::cast(0.5),
            t_max: T::one(),
            n_steps: 30,
            start_step: 20,
            t_eps: T::cast(0.03),
        }
    }
}

impl<T: Scalar> SdeParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= T::zero() && self.gamma.is_finite()) {
            return Err(Error::Config("sde: gamma must be finite and >= 0".into()));
        }
        if !(self.sigma_min > T::zero() && self.sigma_max > self.sigma_min) {
            return Err(Error::Config(
                "sde: need 0 < sigma_min < sigma_max".into(),
            ));
        }
        if !(self.t_max > T::zero()) {
            return Err(Error::Config("sde: t_max must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("sde: n_steps must be >= 1".into()));
        }
        if self.start_step > self.n_steps {
            return Err(Error::Config(format!(
                "sde: start_step {} exceeds n_steps {}",
                self.start_step, self.n_steps
            )));
        }
        if !(self.t_eps >= T::zero() && self.t_eps < self.delta_t()) {
            return Err(Error::Config(
                "sde: t_eps must satisfy 0 <= t_eps < t_max / n_steps".into(),
            ));
        }
        Ok(())
    }

    pub fn delta_t(&self) -> T {
        self.t_max / T::cast(self.n_steps as f64)
    }

    /// Reverse-sampling start time `start_step * delta_t`.
    pub fn t_start(&self) -> T {
        self.delta_t() * T::cast(self.start_step as f64)
    }

    fn check_t(&self, t: T) -> Result<()> {
        if t < T::zero() || t > self.t_max {
            return Err(Error::InvalidInput(format!(
                "sde: t = {t} outside [0, {}]",
                self.t_max
            )));
        }
        Ok(())
    }

    /// Standard deviation `sigma(t)` of the perturbation kernel.
    pub fn sigma(&self, t: T) -> Result<T> {
        self.check_t(t)?;
        let ln_ratio = (self.sigma_max / self.sigma_min).ln();
        let two = T::cast(2.0);
        let ratio_2t = (self.sigma_max / self.sigma_min).powf(two * t);
        let decay = (-two * self.gamma * t).exp();
        let var = self.sigma_min * self.sigma_min * (ratio_2t - decay) * ln_ratio
            / (self.gamma + ln_ratio);
        Ok(var.max(T::zero()).sqrt())
    }
}

/// Langevin corrector settings: `n_corrector` annealed steps per predictor
/// step with step size `2 * (snr * sigma(t))^2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorrectorConfig<T> {
    pub n_corrector: usize,
    pub snr: T,
}

impl<T: Scalar> Default for CorrectorConfig<T> {
    fn default() -> Self {
        Self {
            n_corrector: 1,
            snr: T::cast(0.5),
        }
    }
}

/// A timestamped diffusion state together with its ordered condition set.
/// The first condition is the drift/kernel center.
#[derive(Debug, Clone)]
pub struct DiffusionState<T: Scalar> {
    pub x: ComplexSpectrogram<T>,
    pub t: T,
    pub conditions: Vec<ComplexSpectrogram<T>>,
}

impl<T: Scalar> DiffusionState<T> {
    pub fn new(
        x: ComplexSpectrogram<T>,
        t: T,
        conditions: Vec<ComplexSpectrogram<T>>,
        params: &SdeParams<T>,
    ) -> Result<Self> {
        params.check_t(t)?;
        for c in &conditions {
            if c.shape() != x.shape() {
                let (lt, lf) = x.shape();
                let (rt, rf) = c.shape();
                return Err(Error::shape_mismatch("diffusion state condition", &[lt, lf], &[rt, rf]));
            }
        }
        Ok(Self { x, t, conditions })
    }
}

/// M independently sampled enhanced spectrograms awaiting ensembling.
#[derive(Debug, Clone)]
pub struct TrajectorySet<T: Scalar> {
    members: Vec<ComplexSpectrogram<T>>,
    seeds: Vec<u64>,
}

impl<T: Scalar> TrajectorySet<T> {
    pub fn new(members: Vec<ComplexSpectrogram<T>>, seeds: Vec<u64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidInput("trajectory set must have M >= 1".into()));
        }
        if members.len() != seeds.len() {
            return Err(Error::InvalidInput(
                "trajectory set: members and seeds must align".into(),
            ));
        }
        let shape = members[0].shape();
        if members.iter().any(|m| m.shape() != shape) {
            return Err(Error::InvalidInput(
                "trajectory set: members must share one shape".into(),
            ));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(
                "trajectory set: seeds must be pairwise distinct".into(),
            ));
        }
        Ok(Self { members, seeds })
    }

    pub fn members(&self) -> &[ComplexSpectrogram<T>] {
        &self.members
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Draw circularly-symmetric complex white noise with `E|z|^2 = 1`.
pub fn complex_standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Cplx<T> {
    let half = T::cast(0.5).sqrt();
    Cplx::new(
        T::standard_normal(rng) * half,
        T::standard_normal(rng) * half,
    )
}

/// Matrix of i.i.d. complex white noise.
pub fn complex_noise<T: Scalar, R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<Cplx<T>> {
    let mut out = Array2::zeros(shape);
    for v in out.iter_mut() {
        *v = complex_standard_normal(rng);
    }
    out
}

fn check_same_shape<T: Scalar>(
    context: &str,
    a: &Array2<Cplx<T>>,
    b: &Array2<Cplx<T>>,
) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape_mismatch(
            context,
            &[a.nrows(), a.ncols()],
            &[b.nrows(), b.ncols()],
        ));
    }
    Ok(())
}

/// Drift coefficient `f(x_t, y) = gamma * (y - x_t)`, elementwise.
pub fn drift<T: Scalar>(
    x_t: &Array2<Cplx<T>>,
    y_cond: &Array2<Cplx<T>>,
    params: &SdeParams<T>,
) -> Result<Array2<Cplx<T>>> {
    check_same_shape("drift", x_t, y_cond)?;
    let gamma = params.gamma;
    Ok(ndarray::Zip::from(y_cond)
        .and(x_t)
        .map_collect(|y, x| (y - x) * gamma))
}

/// Diffusion coefficient `g(t)`.
pub fn diffusion_coeff<T: Scalar>(t: T, params: &SdeParams<T>) -> Result<T> {
    params.check_t(t)?;
    let ratio = params.sigma_max / params.sigma_min;
    let ln_ratio = ratio.ln();
    Ok(params.sigma_min * ratio.powf(t) * (T::cast(2.0) * ln_ratio).sqrt())
}

/// Closed-form perturbation kernel of the forward SDE:
/// mean `e^{-gamma t} x0 + (1 - e^{-gamma t}) y` and standard deviation
/// `sigma(t)`.
pub fn perturbation_kernel<T: Scalar>(
    x0: &Array2<Cplx<T>>,
    y_cond: &Array2<Cplx<T>>,
    t: T,
    params: &SdeParams<T>,
) -> Result<(Array2<Cplx<T>>, T)> {
    check_same_shape("perturbation_kernel", x0, y_cond)?;
    let decay = (-params.gamma * t).exp();
    params.check_t(t)?;
    let one_minus = T::one() - decay;
    let mean = ndarray::Zip::from(x0)
        .and(y_cond)
        .map_collect(|a, b| a * decay + b * one_minus);
    let sigma = params.sigma(t)?;
    Ok((mean, sigma))
}

/// A forward-diffused sample together with the noise that produced it.
pub struct Perturbed<T: Scalar> {
    pub x_t: Array2<Cplx<T>>,
    pub z: Array2<Cplx<T>>,
    pub sigma: T,
}

/// Sample `x_t = mean + sigma(t) z` with fresh complex white noise.
pub fn perturb<T: Scalar>(
    x0: &Array2<Cplx<T>>,
    y_cond: &Array2<Cplx<T>>,
    t: T,
    params: &SdeParams<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Perturbed<T>> {
    let (mean, sigma) = perturbation_kernel(x0, y_cond, t, params)?;
    let z = complex_noise(mean.dim(), rng);
    let x_t = ndarray::Zip::from(&mean)
        .and(&z)
        .map_collect(|m, n| m + n * sigma);
    Ok(Perturbed { x_t, z, sigma })
}

/// Forward-SDE sampling wrapped in a [`DiffusionState`]; the condition list
/// of the returned state is `[y_cond]`.
pub fn sample_forward<T: Scalar>(
    x0: &ComplexSpectrogram<T>,
    y_cond: &ComplexSpectrogram<T>,
    t: T,
    params: &SdeParams<T>,
    rng: &mut ChaCha8Rng,
) -> Result<DiffusionState<T>> {
    let p = perturb(x0.values(), y_cond.values(), t, params, rng)?;
    let x = x0.with_values(p.x_t)?;
    DiffusionState::new(x, t, vec![y_cond.clone()], params)
}

/// Score-matching loss `mean |score_est + z / sigma_t|^2`.
pub fn score_loss<T: Scalar>(
    score_est: &Array2<Cplx<T>>,
    z: &Array2<Cplx<T>>,
    sigma_t: T,
) -> Result<T> {
    if sigma_t <= T::zero() {
        return Err(Error::InvalidInput("score_loss: sigma_t must be > 0".into()));
    }
    check_same_shape("score_loss", score_est, z)?;
    let inv = T::one() / sigma_t;
    let total: T = score_est
        .iter()
        .zip(z.iter())
        .map(|(s, n)| {
            let d = s + n * inv;
            d.re * d.re + d.im * d.im
        })
        .sum();
    Ok(total / T::cast(score_est.len() as f64))
}

/// Initialize the reverse process at `t_start` centered on the given
/// feature: `x = center + sigma(t_start) z`. Starting from the terminal time
/// with a noisy-speech center reproduces the prior `N_c(y, sigma(t_max)^2 I)`;
/// starting from a mid step with the deterministic estimate draws the
/// forward-diffused mid state.
pub fn init_reverse_state<T: Scalar>(
    center: &ComplexSpectrogram<T>,
    conditions: Vec<ComplexSpectrogram<T>>,
    t_start: T,
    params: &SdeParams<T>,
    rng: &mut ChaCha8Rng,
) -> Result<DiffusionState<T>> {
    params.check_t(t_start)?;
    let sigma = params.sigma(t_start)?;
    let z = complex_noise::<T, _>(center.values().dim(), rng);
    let x = center.with_values(ndarray::Zip::from(center.values())
        .and(&z)
        .map_collect(|c, n| c + n * sigma))?;
    DiffusionState::new(x, t_start, conditions, params)
}

fn finite<T: Scalar>(a: &Array2<Cplx<T>>) -> bool {
    a.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// Predictor-corrector reverse sampling from `init.t` down to `t_eps`.
///
/// Each of the `round(init.t / delta_t)` predictor steps is a reverse
/// Euler-Maruyama step of the conditional reverse SDE, followed by
/// `corrector.n_corrector` annealed Langevin steps; every step injects fresh
/// Gaussian noise so each call follows its own Brownian trajectory. The
/// final predictor step emits its mean without noise and is not followed by
/// a corrector.
///
/// `score_fn(x_t, conditions, t)` must return a matrix matching `x_t`;
/// `init.conditions[0]` is used as the drift center.
pub fn pc_sample<T, F>(
    mut score_fn: F,
    init: &DiffusionState<T>,
    params: &SdeParams<T>,
    corrector: &CorrectorConfig<T>,
    rng: &mut ChaCha8Rng,
) -> Result<ComplexSpectrogram<T>>
where
    T: Scalar,
    F: FnMut(&Array2<Cplx<T>>, &[ComplexSpectrogram<T>], T) -> Result<Array2<Cplx<T>>>,
{
    params.validate()?;
    let delta_t = params.delta_t();
    let k_f = (init.t / delta_t).to_f64().unwrap().round();
    let k = k_f as usize;
    if ((init.t - delta_t * T::cast(k_f)).abs() / delta_t) > T::cast(1e-6) {
        return Err(Error::InvalidInput(format!(
            "pc_sample: init.t = {} is not a multiple of delta_t = {delta_t}",
            init.t
        )));
    }
    if init.conditions.is_empty() {
        return Err(Error::InvalidInput(
            "pc_sample: at least one condition (drift center) required".into(),
        ));
    }
    let center = init.conditions[0].values().clone();
    let mut x = init.x.values().clone();

    for i in (1..=k).rev() {
        let t_cur = delta_t * T::cast(i as f64);
        let t_next = if i == 1 {
            params.t_eps
        } else {
            delta_t * T::cast((i - 1) as f64)
        };
        let dt = t_cur - t_next;

        let score = score_fn(&x, &init.conditions, t_cur)?;
        if !finite(&score) {
            return Err(Error::NonFinite(format!(
                "pc_sample: score at predictor step {i} (t = {t_cur})"
            )));
        }
        let g = diffusion_coeff(t_cur, params)?;
        let f = drift(&x, &center, params)?;
        let g2 = g * g;
        // Reverse Euler-Maruyama mean: x - [f - g^2 s] dt.
        let mean = ndarray::Zip::from(&x)
            .and(&f)
            .and(&score)
            .map_collect(|xv, fv, sv| xv - (fv - sv * g2) * dt);
        if i == 1 {
            x = mean;
            break;
        }
        let noise_scale = g * dt.sqrt();
        let z = complex_noise::<T, _>(x.dim(), rng);
        x = ndarray::Zip::from(&mean)
            .and(&z)
            .map_collect(|m, n| m + n * noise_scale);

        for j in 0..corrector.n_corrector {
            let score = score_fn(&x, &init.conditions, t_next)?;
            if !finite(&score) {
                return Err(Error::NonFinite(format!(
                    "pc_sample: score at corrector step {i}.{j} (t = {t_next})"
                )));
            }
            let sigma = params.sigma(t_next)?;
            let eps = T::cast(2.0) * (corrector.snr * sigma) * (corrector.snr * sigma);
            let noise = complex_noise::<T, _>(x.dim(), rng);
            let noise_scale = (T::cast(2.0) * eps).sqrt();
            x = ndarray::Zip::from(&x)
                .and(&score)
                .and(&noise)
                .map_collect(|xv, sv, nv| xv + sv * eps + nv * noise_scale);
        }
        if !finite(&x) {
            return Err(Error::NonFinite(format!(
                "pc_sample: state after step {i}"
            )));
        }
    }
    init.x.with_values(x)
}

/// Elementwise arithmetic mean of the trajectory members.
pub fn ensemble<T: Scalar>(trajectories: &TrajectorySet<T>) -> Result<ComplexSpectrogram<T>> {
    let members = trajectories.members();
    let mut acc = members[0].values().clone();
    for m in &members[1..] {
        acc = acc + m.values();
    }
    let scale = T::one() / T::cast(members.len() as f64);
    let mean = acc.mapv(|v| v * scale);
    members[0].with_values(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::StftParams;
    use ndarray::Array2;
    use rand::SeedableRng;

    fn params() -> SdeParams<f64> {
        SdeParams::default()
    }

    fn spec_of(values: Array2<Cplx<f64>>) -> ComplexSpectrogram<f64> {
        let f = values.ncols();
        let p = StftParams {
            window_length: (f - 1) * 2,
            hop: (f - 1) / 2,
            fft_length: (f - 1) * 2,
            window: crate::spectral::Window::Hann,
        };
        ComplexSpectrogram::new(values, p, true).unwrap()
    }

    fn random_mat(shape: (usize, usize), seed: u64) -> Array2<Cplx<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        complex_noise(shape, &mut rng)
    }

    #[test]
    fn drift_examples() {
        let p = params();
        let x = random_mat((3, 5), 1);
        // Fixed point: x = y.
        let d = drift(&x, &x, &p).unwrap();
        assert!(d.iter().all(|v| v.norm() == 0.0));
        // gamma = 0.
        let mut p0 = p;
        p0.gamma = 0.0;
        let y = random_mat((3, 5), 2);
        let d0 = drift(&x, &y, &p0).unwrap();
        assert!(d0.iter().all(|v| v.norm() == 0.0));
        // Hand value: gamma = 1.5, (y - x) = 2 at one bin -> 3.
        let xs = Array2::from_elem((1, 1), Cplx::new(1.0, 0.0));
        let ys = Array2::from_elem((1, 1), Cplx::new(3.0, 0.0));
        let dv = drift(&xs, &ys, &p).unwrap();
        assert!((dv[[0, 0]] - Cplx::new(3.0, 0.0)).norm() < 1e-12);
        // Shape mismatch.
        assert!(drift(&x, &random_mat((2, 5), 3), &p).is_err());
    }

    #[test]
    fn diffusion_coeff_examples() {
        let p = params();
        let g1 = diffusion_coeff(1.0, &p).unwrap();
        assert!((g1 - 0.5 * (2.0 * 10f64.ln()).sqrt()).abs() < 1e-12);
        assert!((g1 - 1.07298).abs() < 1e-4);
        let g0 = diffusion_coeff(0.0, &p).unwrap();
        assert!((g0 - 0.10730).abs() < 1e-4);
        // Monotone increasing.
        let mut last = g0;
        for i in 1..=10 {
            let g = diffusion_coeff(i as f64 / 10.0, &p).unwrap();
            assert!(g > last);
            last = g;
        }
        // sigma_max -> sigma_min limit: g -> 0.
        let mut pl = p;
        pl.sigma_max = pl.sigma_min * (1.0 + 1e-9);
        assert!(diffusion_coeff(0.5, &pl).unwrap() < 1e-4);
        // Out of range.
        assert!(diffusion_coeff(-0.1, &p).is_err());
        assert!(diffusion_coeff(1.1, &p).is_err());
    }

    #[test]
    fn kernel_endpoints() {
        let p = params();
        let x0 = random_mat((4, 6), 10);
        let y = random_mat((4, 6), 11);
        let (mean, sigma) = perturbation_kernel(&x0, &y, 0.0, &p).unwrap();
        assert!(sigma.abs() < 1e-12);
        assert!(mean
            .iter()
            .zip(x0.iter())
            .all(|(a, b)| (a - b).norm() < 1e-12));
        // x0 = y -> mean = y for all t.
        for &t in &[0.1, 0.5, 1.0] {
            let (mean, _) = perturbation_kernel(&y, &y, t, &p).unwrap();
            assert!(mean
                .iter()
                .zip(y.iter())
                .all(|(a, b)| (a - b).norm() < 1e-12));
        }
    }

    /// Euler-Maruyama simulation of the forward SDE (independent oracle).
    fn em_forward(
        x0: Cplx<f64>,
        y: Cplx<f64>,
        t_end: f64,
        n_sub: usize,
        p: &SdeParams<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Cplx<f64> {
        let dt = t_end / n_sub as f64;
        let sqrt_dt = dt.sqrt();
        let mut x = x0;
        for i in 0..n_sub {
            let t = i as f64 * dt;
            let g = diffusion_coeff(t, p).unwrap();
            let z = complex_standard_normal::<f64, _>(rng);
            x = x + (y - x) * p.gamma * dt + z * (g * sqrt_dt);
        }
        x
    }

    #[test]
    fn kernel_matches_euler_maruyama() {
        let p = params();
        let x0 = Cplx::new(1.0, 0.5);
        let y = Cplx::new(0.2, -0.3);
        let t = 0.5;
        let n_paths = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let samples: Vec<Cplx<f64>> = (0..n_paths)
            .map(|_| em_forward(x0, y, t, 400, &p, &mut rng))
            .collect();
        let mean = samples.iter().sum::<Cplx<f64>>() / n_paths as f64;
        let var = samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / n_paths as f64;
        let x0m = Array2::from_elem((1, 1), x0);
        let ym = Array2::from_elem((1, 1), y);
        let (kmean, ksigma) = perturbation_kernel(&x0m, &ym, t, &p).unwrap();
        let mean_rel = (mean - kmean[[0, 0]]).norm() / kmean[[0, 0]].norm();
        let std_rel = (var.sqrt() - ksigma).abs() / ksigma;
        assert!(mean_rel < 0.05, "mean rel err {mean_rel}");
        assert!(std_rel < 0.05, "std rel err {std_rel}");
    }

    #[test]
    fn perturb_reproducible_and_unbiased() {
        let p = params();
        let x0 = random_mat((2, 3), 20);
        let y = random_mat((2, 3), 21);
        let a = perturb(&x0, &y, 0.5, &p, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = perturb(&x0, &y, 0.5, &p, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.x_t, b.x_t);
        // t = 0 returns x0 exactly.
        let z = perturb(&x0, &y, 0.0, &p, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(z
            .x_t
            .iter()
            .zip(x0.iter())
            .all(|(a, b)| (a - b).norm() < 1e-12));
        // Sample mean over many draws matches the kernel mean within 3
        // standard errors per bin.
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut acc = Array2::<Cplx<f64>>::zeros((2, 3));
        for _ in 0..n {
            let s = perturb(&x0, &y, 0.5, &p, &mut rng).unwrap();
            acc = acc + &s.x_t;
        }
        let mean = acc.mapv(|v| v / n as f64);
        let (kmean, sigma) = perturbation_kernel(&x0, &y, 0.5, &p).unwrap();
        // Per real component the std is sigma / sqrt(2).
        let se = sigma / (2.0f64).sqrt() / (n as f64).sqrt();
        for (m, k) in mean.iter().zip(kmean.iter()) {
            assert!((m.re - k.re).abs() < 3.0 * se, "re {} vs {}", m.re, k.re);
            assert!((m.im - k.im).abs() < 3.0 * se, "im {} vs {}", m.im, k.im);
        }
    }

    #[test]
    fn score_loss_examples() {
        let sigma = 0.5;
        let z = random_mat((3, 4), 30);
        let exact = z.mapv(|v| -v / sigma);
        assert!(score_loss(&exact, &z, sigma).unwrap() < 1e-24);
        // z = 0 -> mean |score|^2.
        let s = random_mat((3, 4), 31);
        let zeros = Array2::zeros((3, 4));
        let want = s.iter().map(|v| v.norm_sqr()).sum::<f64>() / 12.0;
        assert!((score_loss(&s, &zeros, sigma).unwrap() - want).abs() < 1e-12);
        // Scalar case: (1 + 1/0.5)^2 = 9.
        let one = Array2::from_elem((1, 1), Cplx::new(1.0f64, 0.0));
        assert!((score_loss(&one, &one, 0.5).unwrap() - 9.0).abs() < 1e-12);
        // sigma <= 0 rejected.
        assert!(score_loss(&one, &one, 0.0).is_err());
    }

    #[test]
    fn score_loss_minimizer_by_gradient_descent() {
        // Unique minimizer of (s + z/sigma)^2 is s = -z/sigma.
        let z = 0.7f64;
        let sigma = 0.3f64;
        let mut s = 0.0f64;
        for _ in 0..2000 {
            let grad = 2.0 * (s + z / sigma);
            s -= 0.05 * grad;
        }
        assert!((s + z / sigma).abs() < 1e-8);
    }

    #[test]
    fn init_reverse_examples() {
        let p = params();
        let center = spec_of(random_mat((3, 5), 40));
        // start_step = 0 -> exact copy.
        let st = init_reverse_state(&center, vec![center.clone()], 0.0, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(st.x.values(), center.values());
        // Reproducibility.
        let a = init_reverse_state(&center, vec![center.clone()], 1.0, &p, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = init_reverse_state(&center, vec![center.clone()], 1.0, &p, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.x.values(), b.x.values());
        // Sample std over 1e4 draws approximates sigma(t_max) within 2%.
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sq = 0.0;
        for _ in 0..n {
            let s = init_reverse_state(&center, vec![center.clone()], 1.0, &p, &mut rng).unwrap();
            sq += s
                .x
                .values()
                .iter()
                .zip(center.values().iter())
                .map(|(a, c)| (a - c).norm_sqr())
                .sum::<f64>()
                / 15.0;
        }
        let std = (sq / n as f64).sqrt();
        let sigma = p.sigma(1.0).unwrap();
        assert!((std - sigma).abs() / sigma < 0.02, "std {std} vs {sigma}");
    }

    #[test]
    fn pc_sample_trivial_and_reproducible() {
        let p = params();
        let x = spec_of(random_mat((2, 3), 50));
        let cond = spec_of(random_mat((2, 3), 51));
        let zero_score = |_x: &Array2<Cplx<f64>>, _c: &[ComplexSpectrogram<f64>], _t: f64| {
            Ok(Array2::<Cplx<f64>>::zeros((2, 3)))
        };
        // start at t = 0: unchanged.
        let st = DiffusionState::new(x.clone(), 0.0, vec![cond.clone()], &p).unwrap();
        let out = pc_sample(zero_score, &st, &p, &CorrectorConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.values(), x.values());
        // Fixed seed -> bit-identical trajectory.
        let st = DiffusionState::new(x.clone(), p.t_start(), vec![cond.clone()], &p).unwrap();
        let a = pc_sample(zero_score, &st, &p, &CorrectorConfig::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = pc_sample(zero_score, &st, &p, &CorrectorConfig::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.values(), b.values());
        let c = pc_sample(zero_score, &st, &p, &CorrectorConfig::default(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn pc_sample_rejects_nan_score_with_step_index() {
        let p = params();
        let x = spec_of(random_mat((2, 3), 60));
        let cond = spec_of(random_mat((2, 3), 61));
        let st = DiffusionState::new(x, p.t_start(), vec![cond], &p).unwrap();
        let bad = |_: &Array2<Cplx<f64>>, _: &[ComplexSpectrogram<f64>], _: f64| {
            Ok(Array2::from_elem((2, 3), Cplx::new(f64::NAN, 0.0)))
        };
        let err = pc_sample(bad, &st, &p, &CorrectorConfig::default(), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step 20"), "missing step index: {msg}");
    }

    /// Reference predictor-only reverse Euler-Maruyama (independent of
    /// pc_sample's corrector plumbing).
    fn reference_predictor_only(
        init: &DiffusionState<f64>,
        p: &SdeParams<f64>,
        rng: &mut ChaCha8Rng,
        score_fn: impl Fn(&Array2<Cplx<f64>>, f64) -> Array2<Cplx<f64>>,
    ) -> Array2<Cplx<f64>> {
        let delta_t = p.delta_t();
        let k = (init.t / delta_t).round() as usize;
        let center = init.conditions[0].values().clone();
        let mut x = init.x.values().clone();
        for i in (1..=k).rev() {
            let t_cur = delta_t * i as f64;
            let t_next = if i == 1 { p.t_eps } else { delta_t * (i - 1) as f64 };
            let dt = t_cur - t_next;
            let s = score_fn(&x, t_cur);
            let g = diffusion_coeff(t_cur, p).unwrap();
            let mean = ndarray::Zip::from(&x)
                .and(&center)
                .and(&s)
                .map_collect(|xv, cv, sv| xv - ((cv - xv) * p.gamma - sv * (g * g)) * dt);
            if i == 1 {
                x = mean;
            } else {
                let z = complex_noise::<f64, _>(x.dim(), rng);
                x = ndarray::Zip::from(&mean)
                    .and(&z)
                    .map_collect(|m, n| m + n * (g * dt.sqrt()));
            }
        }
        x
    }

    #[test]
    fn predictor_only_matches_reference_bitwise() {
        let p = params();
        let x = spec_of(random_mat((3, 4), 70));
        let cond = spec_of(random_mat((3, 4), 71));
        let st = DiffusionState::new(x, p.t_start(), vec![cond.clone()], &p).unwrap();
        let score = |x: &Array2<Cplx<f64>>, t: f64| {
            let sigma = p.sigma(t).unwrap().max(1e-3);
            ndarray::Zip::from(x)
                .and(cond.values())
                .map_collect(|xv, cv| -(xv - cv) / (sigma * sigma))
        };
        let no_corr = CorrectorConfig { n_corrector: 0, snr: 0.5 };
        let a = pc_sample(
            |x, _c, t| Ok(score(x, t)),
            &st,
            &p,
            &no_corr,
            &mut ChaCha8Rng::seed_from_u64(123),
        )
        .unwrap();
        let b = reference_predictor_only(&st, &p, &mut ChaCha8Rng::seed_from_u64(123), score);
        assert_eq!(a.values(), &b);
    }

    #[test]
    fn pc_sample_matches_analytic_gaussian_posterior() {
        // 1-bin problem: x0 ~ CN(mu, sigma_p^2), center y = mu, so the
        // marginal at t is CN(mu, e^{-2 gamma t} sigma_p^2 + sigma(t)^2) and
        // the analytic score is available in closed form.
        let mut p = params();
        p.start_step = p.n_steps; // start from the terminal time
        let mu = Cplx::new(0.4, -0.2);
        let sigma_p = 0.3f64;
        let center = spec_of(Array2::from_elem((1, 1), mu));
        let score = |x: &Array2<Cplx<f64>>, _c: &[ComplexSpectrogram<f64>], t: f64| {
            let var = (-2.0 * p.gamma * t).exp() * sigma_p * sigma_p
                + p.sigma(t).unwrap().powi(2);
            Ok(x.mapv(|v| -(v - mu) / var))
        };
        let n_runs = 1000;
        let mut sum = Cplx::new(0.0, 0.0);
        let mut vals = Vec::with_capacity(n_runs);
        for run in 0..n_runs {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + run as u64);
            let st = init_reverse_state(&center, vec![center.clone()], p.t_max, &p, &mut rng).unwrap();
            let out = pc_sample(score, &st, &p, &CorrectorConfig::default(), &mut rng).unwrap();
            let v = out.values()[[0, 0]];
            sum += v;
            vals.push(v);
        }
        let mean = sum / n_runs as f64;
        let var_re = vals.iter().map(|v| (v.re - mean.re).powi(2)).sum::<f64>() / n_runs as f64;
        let var_im = vals.iter().map(|v| (v.im - mean.im).powi(2)).sum::<f64>() / n_runs as f64;
        let se_re = (var_re / n_runs as f64).sqrt();
        let se_im = (var_im / n_runs as f64).sqrt();
        assert!(
            (mean.re - mu.re).abs() < 3.0 * se_re,
            "re: {} vs {} (se {se_re})",
            mean.re,
            mu.re
        );
        assert!(
            (mean.im - mu.im).abs() < 3.0 * se_im,
            "im: {} vs {} (se {se_im})",
            mean.im,
            mu.im
        );
    }

    #[test]
    fn ensemble_examples() {
        let a = spec_of(Array2::from_elem((1, 2), Cplx::new(1.0, 0.0)));
        let b = spec_of(Array2::from_elem((1, 2), Cplx::new(3.0, 0.0)));
        // M = 1 identity.
        let one = TrajectorySet::new(vec![a.clone()], vec![1]).unwrap();
        assert_eq!(ensemble(&one).unwrap().values(), a.values());
        // Identical members -> that member.
        let same = TrajectorySet::new(vec![a.clone(), a.clone()], vec![1, 2]).unwrap();
        assert_eq!(ensemble(&same).unwrap().values(), a.values());
        // {1, 3} -> 2.
        let mix = TrajectorySet::new(vec![a.clone(), b], vec![1, 2]).unwrap();
        assert!((ensemble(&mix).unwrap().values()[[0, 0]] - Cplx::new(2.0, 0.0)).norm() < 1e-12);
        // Empty set and duplicate seeds rejected.
        assert!(TrajectorySet::<f64>::new(vec![], vec![]).is_err());
        assert!(TrajectorySet::new(vec![a.clone(), a], vec![3, 3]).is_err());
    }

    #[test]
    fn ensemble_variance_reduction() {
        let target = random_mat((2, 2), 80);
        let reps = 1000;
        let mut errs = Vec::new();
        for &m in &[1usize, 2, 4, 8] {
            let mut total = 0.0;
            let mut rng = ChaCha8Rng::seed_from_u64(81);
            for _ in 0..reps {
                let mut acc = Array2::<Cplx<f64>>::zeros((2, 2));
                for _ in 0..m {
                    let noise = complex_noise::<f64, _>((2, 2), &mut rng);
                    acc = acc + &(target.clone() + noise * 0.5);
                }
                let mean = acc.mapv(|v| v / m as f64);
                total += mean
                    .iter()
                    .zip(target.iter())
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>();
            }
            errs.push(total / reps as f64);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2] && errs[2] > errs[3]);
        // Squared error scales like 1/M.
        let ratio = errs[0] / errs[3];
        assert!((ratio - 8.0).abs() < 2.0, "1/M slope off: ratio {ratio}");
    }
}
