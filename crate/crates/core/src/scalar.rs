//! Scalar abstraction shared by every numeric module.
//!
//! Network kernels widen each element to `f64` for accumulation and narrow
//! back on store, so the same code path is bit-deterministic for `f32` and
//! exact-ish for `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    fn widen(self) -> f64;
    fn narrow(value: f64) -> Self;

    /// Literal conversion helper for constants in generic code.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::narrow(value)
    }
}

impl Scalar for f32 {
    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn narrow(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }

    #[inline(always)]
    fn narrow(value: f64) -> Self {
        value
    }
}
