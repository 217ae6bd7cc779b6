//! Scalar abstraction for the tensor engine.
//!
//! Everything numeric is generic over [`Scalar`]. `f32` is the working
//! precision of the simulator (see the crate-root aliases); `f64` backs the
//! finite-difference oracles in the test suites. Reductions accumulate in
//! `f64` regardless of the element type and truncate on store, with a fixed
//! left-to-right order, so results are reproducible run to run.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type for tensors, parameters, losses and learning rates.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Widen to the accumulation type. Exact for both `f32` and `f64`.
    fn to_acc(self) -> f64;

    /// Truncate an `f64` accumulator back to the element type.
    fn from_acc(acc: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn to_acc(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_acc(acc: f64) -> Self {
        acc as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_acc(self) -> f64 {
        self
    }

    #[inline]
    fn from_acc(acc: f64) -> Self {
        acc
    }
}

/// Left-to-right `f64` sum of an element slice.
pub fn acc_sum<T: Scalar>(values: &[T]) -> f64 {
    let mut acc = 0.0f64;
    for &v in values {
        acc += v.to_acc();
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widening_is_exact_for_f32() {
        let v = 0.1f32;
        assert_eq!(f32::from_acc(v.to_acc()), v);
    }

    #[test]
    fn acc_sum_matches_f64_reference() {
        let xs = [1.0f32, 2.5, -0.5];
        assert_eq!(acc_sum(&xs), 3.0);
    }
}
