//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StandardUniform};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// floating point: f32 or f64
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// Truncating, saturating conversion (NaN maps to 0).
    fn to_i32_saturating(self) -> i32;

    /// One draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from U[0, 1).
    fn uniform01<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline(always)]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline(always)]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            #[inline(always)]
            fn to_i32_saturating(self) -> i32 {
                self as i32
            }

            #[inline(always)]
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                <StandardNormal as Distribution<$t>>::sample(&StandardNormal, rng)
            }

            #[inline(always)]
            fn uniform01<R: Rng + ?Sized>(rng: &mut R) -> Self {
                <StandardUniform as Distribution<$t>>::sample(&StandardUniform, rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Taylor coefficients of `cos x` in powers of `x²`, through `x²⁰`.
const COS_TAYLOR: [f64; 11] = [
    1.0,
    -1.0 / 2.0,
    1.0 / 24.0,
    -1.0 / 720.0,
    1.0 / 40_320.0,
    -1.0 / 3_628_800.0,
    1.0 / 479_001_600.0,
    -1.0 / 87_178_291_200.0,
    1.0 / 20_922_789_888_000.0,
    -1.0 / 6_402_373_705_728_000.0,
    1.0 / 2_432_902_008_176_640_000.0,
];

/// `cos(2πu)` for `u ∈ [0, 1]` without branches or a libm call.
///
/// The turn is folded onto a quarter period, where the truncated Taylor
/// series is accurate to a few ulp in f64; single precision stops after the
/// `x¹²` term. Branch-free folding matters because `u` is random.
#[inline(always)]
pub fn cos_turns<T: Real>(u: T) -> T {
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let s = half - (u - half).abs();
    let r = quarter - (s - quarter).abs();
    let x = r * T::TAU();
    let x2 = x * x;
    let terms = if std::mem::size_of::<T>() <= 4 { 7 } else { COS_TAYLOR.len() };
    let mut acc = T::zero();
    for &c in COS_TAYLOR[..terms].iter().rev() {
        acc = acc * x2 + T::lit(c);
    }
    acc.copysign(quarter - s)
}

/// `cos φ` for φ uniform on `[0, 2π)`.
#[inline(always)]
pub fn cos_uniform_angle<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    cos_turns(T::uniform01(rng))
}

/// Wraps an angle onto `[0, 2π)`.
#[inline]
pub fn wrap_phase<T: Real>(phi: T) -> T {
    let tau = T::TAU();
    let w = phi % tau;
    if w < T::zero() {
        w + tau
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn uniform_cos_has_arcsine_moments() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let c: f64 = cos_uniform_angle(&mut rng);
            assert!((-1.0..=1.0).contains(&c));
            m1 += c;
            m2 += c * c;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        // E[cos] = 0, E[cos²] = 1/2, Var[cos²] = 1/8
        assert!(m1.abs() < 5.0 * (0.5f64 / n as f64).sqrt());
        assert!((m2 - 0.5).abs() < 5.0 * (0.125f64 / n as f64).sqrt());
    }

    #[test]
    fn cos_turns_matches_libm() {
        for i in 0..=10_000 {
            let u = i as f64 / 10_000.0;
            let want = (std::f64::consts::TAU * u).cos();
            assert!((cos_turns(u) - want).abs() < 2e-15, "{u}");
            let uf = u as f32;
            let want_f = (std::f64::consts::TAU * uf as f64).cos();
            assert!((cos_turns(uf) as f64 - want_f).abs() < 3e-7, "{u}");
        }
    }

    #[test]
    fn wrap_phase_range() {
        for &x in &[-7.0f64, -0.1, 0.0, 3.0, 6.3, 100.0] {
            let w = wrap_phase(x);
            assert!((0.0..std::f64::consts::TAU).contains(&w));
            let turns = (w - x) / std::f64::consts::TAU;
            assert!((turns - turns.round()).abs() < 1e-12);
        }
    }
}
