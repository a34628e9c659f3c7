//! Scalar abstractions.
//!
//! Two tiers: [`Scalar`] is an ordered field and is all the exact tree
//! solver and the dual recursion need, so they also run over rationals.
//! [`Real`] adds the floating-point surface required by simulation and
//! regression (f32 and f64).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Ordered field element.
pub trait Scalar: Num + Clone + PartialOrd + Debug {
    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }

    /// Nearest f64, used for reporting and for handing exact trees to the
    /// Monte Carlo side.
    fn to_f64_lossy(&self) -> f64;

    /// `n / d`, exact for the rational types.
    fn from_ratio(n: i64, d: i64) -> Self;
}

impl Scalar for f64 {
    fn to_f64_lossy(&self) -> f64 {
        *self
    }

    fn from_ratio(n: i64, d: i64) -> Self {
        n as f64 / d as f64
    }
}

impl Scalar for f32 {
    fn to_f64_lossy(&self) -> f64 {
        *self as f64
    }

    fn from_ratio(n: i64, d: i64) -> Self {
        (n as f64 / d as f64) as f32
    }
}

impl Scalar for Ratio<i64> {
    fn to_f64_lossy(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }

    fn from_ratio(n: i64, d: i64) -> Self {
        Ratio::new(n, d)
    }
}

impl Scalar for BigRational {
    fn to_f64_lossy(&self) -> f64 {
        let n = self.numer().to_f64().unwrap_or(f64::NAN);
        let d = self.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    }

    fn from_ratio(n: i64, d: i64) -> Self {
        ratio(n, d)
    }
}

/// Floating-point scalar used by the Monte Carlo engine.
pub trait Real:
    Scalar + Float + FromPrimitive + Sum + Copy + Send + Sync + Display + Default + 'static
{
    /// Converts an f64 literal; infallible for f32/f64.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f64 {}
impl Real for f32 {}

/// Builds an exact rational from a small fraction.
pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_is_generic() {
        assert_eq!(f64::max_of(1.0, 3.0), 3.0);
        assert_eq!(
            Ratio::<i64>::max_of(Ratio::new(1, 3), Ratio::new(1, 2)),
            Ratio::new(1, 2)
        );
        assert_eq!(ratio(2, 4), ratio(1, 2));
    }

    #[test]
    fn lossy_conversion() {
        assert!((ratio(1, 3).to_f64_lossy() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f32::lit(0.5), 0.5f32);
    }
}
