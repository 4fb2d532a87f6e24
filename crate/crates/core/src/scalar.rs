//! Scalar abstraction for the numerical kernels.
//!
//! Everything in this crate is written against [`Real`], a thin extension of
//! `num_traits::Float`, so the same code runs in `f32` or `f64`. The concrete
//! aliases used by the CLI live at the crate root and fix `f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::float::FloatConst;
use num_traits::{Float, FromPrimitive};

/// Floating-point scalar with the handful of extras the solvers need.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lift an `f64` literal into this scalar type.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in scalar type")
    }

    /// Lift a `usize` (node counts, quadrature sizes) into this scalar type.
    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("count not representable in scalar type")
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + Sum
        + Debug
        + Display
        + LowerExp
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Relative difference with an absolute floor, used all over the tests.
pub fn rel_err<S: Real>(a: S, b: S, floor: S) -> S {
    let denom = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifts_constants() {
        let x: f64 = Real::of(0.25);
        assert_eq!(x, 0.25);
        let y: f32 = Real::of(1.5);
        assert_eq!(y, 1.5f32);
        assert_eq!(<f64 as Real>::of_usize(7), 7.0);
    }

    #[test]
    fn rel_err_floors() {
        assert_eq!(rel_err(0.0f64, 0.0, 1e-14), 0.0);
        assert!(rel_err(1.0f64, 1.1, 1e-14) - 0.1 / 1.1 < 1e-15);
    }
}
