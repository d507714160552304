//! Waveform <-> complex spectrogram transforms, magnitude compression, and
//! complex ratio mask computation and application.
//!
//! The STFT uses centered frames with reflect padding and a periodic Hann
//! window; any constant-overlap-add-valid hop reconstructs through
//! [`istft`] via weighted overlap-add with a squared-window denominator.

use ndarray::Array2;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{Cplx, Scalar};

/// Denominator clamp for complex-ratio-mask division on zero-energy bins.
pub const CRM_EPS: f64 = 1e-8;

/// Magnitude compression defaults applied to diffusion features.
pub const COMPRESS_ALPHA: f64 = 0.5;
pub const COMPRESS_BETA: f64 = 0.15;

/// Mono audio signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T: Scalar> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample_rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }
}

/// Window function used for analysis and synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann window.
    Hann,
}

impl Window {
    fn generate<T: Scalar>(self, len: usize) -> Vec<T> {
        match self {
            Window::Hann => (0..len)
                .map(|n| {
                    let x = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
                    T::cast(0.5 * (1.0 - x.cos()))
                })
                .collect(),
        }
    }
}

/// STFT analysis/synthesis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_length: usize,
    pub hop: usize,
    pub fft_length: usize,
    pub window: Window,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_length: 512,
            hop: 128,
            fft_length: 512,
            window: Window::Hann,
        }
    }
}

impl StftParams {
    pub fn new(window_length: usize, hop: usize, fft_length: usize, window: Window) -> Result<Self> {
        let p = Self {
            window_length,
            hop,
            fft_length,
            window,
        };
        p.validate()?;
        Ok(p)
    }

    /// Number of one-sided frequency bins.
    pub fn freq_bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.hop == 0 || self.fft_length == 0 {
            return Err(Error::Config("stft: zero-sized parameter".into()));
        }
        if self.window_length > self.fft_length {
            return Err(Error::Config(format!(
                "stft: window_length {} exceeds fft_length {}",
                self.window_length, self.fft_length
            )));
        }
        if self.hop > self.window_length {
            return Err(Error::Config(format!(
                "stft: hop {} exceeds window_length {}",
                self.hop, self.window_length
            )));
        }
        // Squared-window overlap-add denominator must stay bounded away from
        // zero in the steady-state region, otherwise synthesis divides by ~0.
        let w: Vec<f64> = Window::generate::<f64>(self.window, self.window_length);
        let period = self.window_length + self.hop;
        let mut denom = vec![0.0f64; period + self.window_length];
        let mut start = 0usize;
        while start < denom.len() - self.window_length + 1 {
            for (i, wi) in w.iter().enumerate() {
                denom[start + i] += wi * wi;
            }
            start += self.hop;
        }
        let steady = &denom[self.window_length..period];
        let max = steady.iter().cloned().fold(0.0, f64::max);
        let min = steady.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-3 * max && max > 0.0) {
            return Err(Error::Config(format!(
                "stft: window/hop pair ({}, {}) is not overlap-add valid",
                self.window_length, self.hop
            )));
        }
        Ok(())
    }
}

/// Complex T x F spectrogram together with the STFT parameters that produced
/// it and a flag marking magnitude-compressed features.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T: Scalar> {
    values: Array2<Cplx<T>>,
    params: StftParams,
    compressed: bool,
}

impl<T: Scalar> ComplexSpectrogram<T> {
    pub fn new(values: Array2<Cplx<T>>, params: StftParams, compressed: bool) -> Result<Self> {
        if values.ncols() != params.freq_bins() {
            return Err(Error::shape_mismatch(
                "spectrogram freq bins vs fft_length/2+1",
                &[values.nrows(), values.ncols()],
                &[values.nrows(), params.freq_bins()],
            ));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram values".into()));
        }
        Ok(Self {
            values,
            params,
            compressed,
        })
    }

    pub fn values(&self) -> &Array2<Cplx<T>> {
        &self.values
    }

    pub fn params(&self) -> StftParams {
        self.params
    }

    pub fn is_compressed(&self) -> bool {
        self.compressed
    }

    /// (frames, frequency bins)
    pub fn shape(&self) -> (usize, usize) {
        (self.values.nrows(), self.values.ncols())
    }

    /// Replace the values while keeping provenance metadata; shape must match.
    pub fn with_values(&self, values: Array2<Cplx<T>>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::shape_mismatch(
                "with_values",
                &[values.nrows(), values.ncols()],
                &[self.values.nrows(), self.values.ncols()],
            ));
        }
        Self::new(values, self.params, self.compressed)
    }
}

/// Complex ratio mask with the same shape as its source spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct CrmMask<T: Scalar> {
    values: Array2<Cplx<T>>,
}

impl<T: Scalar> CrmMask<T> {
    pub fn new(values: Array2<Cplx<T>>) -> Result<Self> {
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("mask values".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<Cplx<T>> {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.nrows(), self.values.ncols())
    }

    /// Polar view: (magnitude, phase) with phase in (-pi, pi] and the 0+0j
    /// bin mapped to (0, 0).
    pub fn to_polar(&self) -> (Array2<T>, Array2<T>) {
        let mag = self.values.mapv(|v| v.norm());
        let phase = self.values.mapv(|v| {
            if v.re.is_zero() && v.im.is_zero() {
                T::zero()
            } else {
                v.im.atan2(v.re)
            }
        });
        (mag, phase)
    }
}

fn reflect_index(i: isize, n: isize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    // Fold into the period of the reflected signal (period 2(n-1)).
    let period = 2 * (n - 1);
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

/// Short-time Fourier transform with centered frames and reflect padding.
///
/// Produces `1 + floor(len / hop)` frames of `fft_length/2 + 1` one-sided
/// bins each.
pub fn stft<T: Scalar>(wave: &Waveform<T>, params: StftParams) -> Result<ComplexSpectrogram<T>> {
    params.validate()?;
    if wave.is_empty() {
        return Err(Error::InvalidInput("stft: empty waveform".into()));
    }
    if wave.samples().iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("stft input".into()));
    }

    let win_len = params.window_length;
    let hop = params.hop;
    let fft_len = params.fft_length;
    let n = wave.len();
    let pad = win_len / 2;
    let n_frames = 1 + n / hop;
    let n_bins = params.freq_bins();

    let window: Vec<T> = params.window.generate(win_len);
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(fft_len);

    let samples = wave.samples();
    let mut out = Array2::<Cplx<T>>::zeros((n_frames, n_bins));
    let mut buf = vec![Cplx::new(T::zero(), T::zero()); fft_len];
    let mut scratch = vec![Cplx::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];

    for frame in 0..n_frames {
        let start = frame as isize * hop as isize - pad as isize;
        for (i, b) in buf.iter_mut().take(win_len).enumerate() {
            let idx = reflect_index(start + i as isize, n as isize);
            *b = Cplx::new(samples[idx] * window[i], T::zero());
        }
        for b in buf.iter_mut().skip(win_len) {
            *b = Cplx::new(T::zero(), T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, v) in out.row_mut(frame).iter_mut().enumerate() {
            *v = buf[k];
        }
    }

    ComplexSpectrogram::new(out, params, false)
}

/// Inverse STFT via weighted overlap-add; returns the natural synthesis
/// length `(frames - 1) * hop`, which is within one hop of the analysis
/// length.
pub fn istft<T: Scalar>(spec: &ComplexSpectrogram<T>, sample_rate: u32) -> Result<Waveform<T>> {
    if spec.is_compressed() {
        return Err(Error::InvalidInput(
            "istft: spectrogram is magnitude-compressed; decompress first".into(),
        ));
    }
    let params = spec.params();
    let win_len = params.window_length;
    let hop = params.hop;
    let fft_len = params.fft_length;
    let n_frames = spec.values().nrows();
    let n_bins = params.freq_bins();

    let window: Vec<T> = params.window.generate(win_len);
    let mut planner = FftPlanner::<T>::new();
    let ifft = planner.plan_fft_inverse(fft_len);

    let ola_len = (n_frames - 1) * hop + win_len;
    let mut acc = vec![T::zero(); ola_len];
    let mut denom = vec![T::zero(); ola_len];
    let mut buf = vec![Cplx::new(T::zero(), T::zero()); fft_len];
    let mut scratch = vec![Cplx::new(T::zero(), T::zero()); ifft.get_inplace_scratch_len()];
    let scale = T::one() / T::cast(fft_len as f64);

    for frame in 0..n_frames {
        let row = spec.values().row(frame);
        buf[0] = row[0];
        for k in 1..n_bins {
            buf[k] = row[k];
            if fft_len - k >= n_bins {
                buf[fft_len - k] = row[k].conj();
            }
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = frame * hop;
        for i in 0..win_len {
            acc[start + i] += buf[i].re * scale * window[i];
            denom[start + i] += window[i] * window[i];
        }
    }

    let pad = win_len / 2;
    let out_len = (n_frames - 1) * hop;
    let eps = T::cast(1e-8);
    let mut samples = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let d = denom[pad + i];
        samples.push(if d > eps { acc[pad + i] / d } else { T::zero() });
    }
    Waveform::new(samples, sample_rate)
}

/// Magnitude-power compression `beta * |X|^alpha * e^{j angle(X)}`.
pub fn compress<T: Scalar>(
    spec: &ComplexSpectrogram<T>,
    alpha: T,
    beta: T,
) -> Result<ComplexSpectrogram<T>> {
    if alpha <= T::zero() || beta <= T::zero() {
        return Err(Error::InvalidInput(
            "compress: alpha and beta must be positive".into(),
        ));
    }
    if spec.is_compressed() {
        return Err(Error::InvalidInput(
            "compress: spectrogram already compressed".into(),
        ));
    }
    let values = spec.values().mapv(|v| {
        let m = v.norm();
        if m.is_zero() {
            v
        } else {
            // Scaling by a positive real factor preserves the phase.
            v * (beta * m.powf(alpha - T::one()))
        }
    });
    ComplexSpectrogram::new(values, spec.params(), true)
}

/// Inverse of [`compress`].
pub fn decompress<T: Scalar>(
    spec: &ComplexSpectrogram<T>,
    alpha: T,
    beta: T,
) -> Result<ComplexSpectrogram<T>> {
    if alpha <= T::zero() || beta <= T::zero() {
        return Err(Error::InvalidInput(
            "decompress: alpha and beta must be positive".into(),
        ));
    }
    if !spec.is_compressed() {
        return Err(Error::InvalidInput(
            "decompress: spectrogram is not compressed".into(),
        ));
    }
    let inv_alpha = T::one() / alpha;
    let values = spec.values().mapv(|v| {
        let m = v.norm();
        if m.is_zero() {
            v
        } else {
            v * ((m / beta).powf(inv_alpha) / m)
        }
    });
    ComplexSpectrogram::new(values, spec.params(), false)
}

/// Complex ratio mask `S * conj(Y) / max(|Y|^2, eps)` computed bin-wise.
pub fn crm<T: Scalar>(
    noisy: &ComplexSpectrogram<T>,
    clean: &ComplexSpectrogram<T>,
) -> Result<CrmMask<T>> {
    if noisy.shape() != clean.shape() {
        let (ln, lf) = noisy.shape();
        let (rn, rf) = clean.shape();
        return Err(Error::shape_mismatch("crm", &[ln, lf], &[rn, rf]));
    }
    let eps = T::cast(CRM_EPS);
    let mut values = Array2::<Cplx<T>>::zeros(noisy.shape());
    for ((y, s), m) in noisy
        .values()
        .iter()
        .zip(clean.values().iter())
        .zip(values.iter_mut())
    {
        let denom = (y.re * y.re + y.im * y.im).max(eps);
        let re = (y.re * s.re + y.im * s.im) / denom;
        let im = (y.re * s.im - y.im * s.re) / denom;
        *m = Cplx::new(re, im);
    }
    CrmMask::new(values)
}

/// Polar view of a Cartesian mask; convenience wrapper over
/// [`CrmMask::to_polar`].
pub fn cartesian_to_polar<T: Scalar>(mask: &CrmMask<T>) -> (Array2<T>, Array2<T>) {
    mask.to_polar()
}

/// Apply a mask in polar form: `|Y| * |M| * e^{j(angle(Y) + angle(M))}`.
pub fn apply_mask_polar<T: Scalar>(
    noisy: &ComplexSpectrogram<T>,
    mask: &CrmMask<T>,
) -> Result<ComplexSpectrogram<T>> {
    if noisy.shape() != mask.shape() {
        let (ln, lf) = noisy.shape();
        let (rn, rf) = mask.shape();
        return Err(Error::shape_mismatch("apply_mask_polar", &[ln, lf], &[rn, rf]));
    }
    let mut values = Array2::<Cplx<T>>::zeros(noisy.shape());
    for ((y, m), o) in noisy
        .values()
        .iter()
        .zip(mask.values().iter())
        .zip(values.iter_mut())
    {
        let mag = y.norm() * m.norm();
        let phase = y.im.atan2(y.re) + m.im.atan2(m.re);
        *o = Cplx::new(mag * phase.cos(), mag * phase.sin());
    }
    noisy.with_values(values)
}
