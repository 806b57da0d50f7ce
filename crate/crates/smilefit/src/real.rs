//! Scalar abstraction for the pricing and smile math.

use num_traits::{Float, FromPrimitive};

/// Floating point scalar the analytics are generic over (f32 or f64).
pub trait Real: Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + 'static {
    /// Lift an f64 constant into the scalar type.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable")
    }

    #[inline]
    fn half() -> Self {
        Self::c(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::c(2.0)
    }

    #[inline]
    fn pi() -> Self {
        Self::c(std::f64::consts::PI)
    }

    /// 2 / sqrt(pi), the slope of erf at the origin.
    #[inline]
    fn frac_2_sqrt_pi() -> Self {
        Self::c(std::f64::consts::FRAC_2_SQRT_PI)
    }
}

impl Real for f32 {}
impl Real for f64 {}
