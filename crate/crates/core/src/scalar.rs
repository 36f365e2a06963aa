//! Scalar abstraction for the numerical core.
//!
//! Everything in the math modules ([`crate::gp`], [`crate::cma`],
//! [`crate::region`], [`crate::embedding`], [`crate::trscale`]) is generic
//! over [`Scalar`], so the same code runs in `f32` or `f64`. The optimizers
//! and the experiment runner use the `f64` aliases exported from the crate
//! root.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar the core math is generic over (`f32` or `f64`).
///
/// Extends [`nalgebra::RealField`] with constant conversion and the two
/// primitive random draws the library needs, keeping downstream trait
/// bounds to a single `T: Scalar`.
pub trait Scalar: RealField + FromPrimitive + ToPrimitive + Copy {
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant")
    }

    /// Converts to `f64` for logging and file output.
    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }

    /// One draw from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from the uniform distribution on `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}

impl Scalar for f32 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn constant_conversion_round_trips() {
        assert_eq!(f64::of(0.3), 0.3);
        assert_eq!(f32::of(0.5), 0.5f32);
        assert_eq!(0.25f32.as_f64(), 0.25);
    }

    #[test]
    fn draws_are_deterministic_per_seed() {
        let mut a = ChaCha12Rng::seed_from_u64(7);
        let mut b = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..16 {
            assert_eq!(f64::standard_normal(&mut a), f64::standard_normal(&mut b));
            assert_eq!(f64::unit_uniform(&mut a), f64::unit_uniform(&mut b));
        }
    }
}
