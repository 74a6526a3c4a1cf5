//! Scalar abstraction so the model math runs on f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric core is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an f64 constant into the active scalar type.
#[inline]
pub fn s<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant representable in scalar type")
}

/// ln(2), used to keep every loss in base-2 bits.
#[inline]
pub fn ln2<S: Scalar>() -> S {
    s(std::f64::consts::LN_2)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Inverse of [`sigmoid`]; `p` must lie strictly inside (0, 1).
#[inline]
pub fn logit<S: Scalar>(p: S) -> S {
    (p / (S::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_in_both_tails() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_matches_known_values() {
        assert!((sigmoid(0.999f64) - 0.7308619).abs() < 1e-6);
        assert!((sigmoid(1.5f64) - 0.8175745).abs() < 1e-6);
        assert!((sigmoid(2.0f64) - 0.8807971).abs() < 1e-6);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &p in &[0.01f64, 0.3, 0.5, 0.9, 0.999] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn works_for_f32() {
        let p: f32 = sigmoid(s::<f32>(0.5));
        assert!((p - 0.62245935).abs() < 1e-6);
    }
}
