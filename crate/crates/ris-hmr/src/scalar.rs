//! Scalar abstraction for the real field underlying all complex arithmetic.
//!
//! The numerical core is generic over [`RealScalar`] (f32 or f64); the crate
//! root exports concrete f64 aliases, and every shipped entry point (CLI,
//! evaluation harness) runs in double precision. The variance-subtraction
//! steps of the message passing are the accuracy bottleneck, so f64 is the
//! supported precision; f32 exists for experimentation only.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftNum;

pub trait RealScalar:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + FftNum + Display + Debug + LowerExp
{
    /// Converts an f64 literal; panics only if the target type cannot
    /// represent any finite approximation (never for f32/f64).
    fn lit(x: f64) -> Self;

    /// One standard normal draw N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One uniform draw on [0, 1).
    fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_real_scalar {
    ($t:ty) => {
        impl RealScalar for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }
            #[inline]
            fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.gen::<$t>()
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real_scalar!(f32);
impl_real_scalar!(f64);

/// Circularly symmetric complex normal draw CN(0, 1): real and imaginary
/// parts are independent N(0, 1/2).
pub fn complex_standard<T: RealScalar, R: Rng + ?Sized>(rng: &mut R) -> Complex<T> {
    let half = T::lit(0.5).sqrt();
    Complex::new(
        T::standard_normal(rng) * half,
        T::standard_normal(rng) * half,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lit_round_trips() {
        assert_eq!(f64::lit(1.5), 1.5);
        assert_eq!(f32::lit(0.25), 0.25f32);
    }

    #[test]
    fn complex_standard_has_unit_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mut acc = 0.0f64;
        for _ in 0..n {
            acc += complex_standard::<f64, _>(&mut rng).norm_sqr();
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean power {mean}");
    }
}
