//! Scalar abstraction: every numeric kernel in this crate is generic over the
//! floating-point type, with `f32` used for training throughput and `f64` for
//! the high-precision oracles in the test suites.

use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point scalar the DSP, SDE, and network kernels are generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + rustfft::FftNum
    + std::iter::Sum
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Conversion from `f64` for literals and config values.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to scalar")
    }

    /// Draw from the standard normal distribution N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

/// Complex value over the generic scalar.
pub type Cplx<T> = num_complex::Complex<T>;
