//! Floating-point abstraction used by every numeric routine in this crate.
//!
//! All solvers are written against [`Scalar`] so the same code instantiates
//! at `f32` or `f64`. The crate root exports `f64`-concrete aliases for the
//! common types; pick `f32` explicitly only when memory pressure matters more
//! than the tolerances you can certify.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Trait alias for the scalar types the toolkit operates on.
///
/// Everything required here is satisfied by `f32` and `f64`; the blanket impl
/// below picks those (and any future standard float) up automatically.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + std::iter::Sum<Self>
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts a finite `f64` literal into this scalar type.
    ///
    /// Used at API boundaries (file formats, tolerances, seeds) where values
    /// are naturally written as `f64`. Panics on values that do not convert,
    /// which for float targets only happens with exotic custom types.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant must convert into the scalar type")
    }

    /// Widens to `f64`, e.g. for serialization into reports.
    fn widen(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + LinalgScalar
        + ScalarOperand
        + std::iter::Sum<T>
        + std::fmt::Debug
        + std::fmt::Display
        + Default
        + Send
        + Sync
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_halves<F: Scalar>(n: usize) -> F {
        (0..n).map(|_| F::of(0.5)).sum()
    }

    #[test]
    fn both_float_widths_instantiate() {
        assert_eq!(sum_of_halves::<f32>(4), 2.0f32);
        assert_eq!(sum_of_halves::<f64>(4), 2.0f64);
        assert_eq!(f64::of(1.25).widen(), 1.25);
    }
}
