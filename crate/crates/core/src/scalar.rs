//! Numeric abstraction shared by every model component.
//!
//! All layers, losses and optimizers are written once against [`Scalar`] and
//! instantiated at `f32` for training runs and `f64` for gradient checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating point element type usable by the model.
///
/// Implemented automatically for every type satisfying the bounds, which in
/// practice means `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssignOps
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this type.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 constant representable")
    }

    #[inline]
    fn from_f32_value(v: f32) -> Self {
        <Self as FromPrimitive>::from_f32(v).expect("f32 value representable")
    }

    #[inline]
    fn to_f64_value(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn to_f32_value(self) -> f32 {
        num_traits::ToPrimitive::to_f32(&self).unwrap_or(f32::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + NumAssignOps
        + ScalarOperand
        + LinalgScalar
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip<F: Scalar>(v: f32) -> f32 {
        F::from_f32_value(v).to_f32_value()
    }

    #[test]
    fn f32_values_survive_both_precisions() {
        for v in [0.0f32, -1.5, 1e-30, 3.4e38, f32::MIN_POSITIVE] {
            assert_eq!(roundtrip::<f32>(v).to_bits(), v.to_bits());
            assert_eq!(roundtrip::<f64>(v).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn lit_is_exact_for_small_integers() {
        assert_eq!(f32::lit(3.0), 3.0);
        assert_eq!(f64::lit(0.5), 0.5);
    }
}
