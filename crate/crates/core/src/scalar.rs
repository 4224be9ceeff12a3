//! Scalar abstraction shared by the closed-form layers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type usable by the analytic modules (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits the scalar type")
    }

    /// Converts an index or count.
    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count fits the scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Relative accuracy this type can be expected to hold through a chain of
    /// a few hundred operations.
    fn working_eps() -> Self;
}

impl Real for f64 {
    fn working_eps() -> Self {
        1e-12
    }
}

impl Real for f32 {
    fn working_eps() -> Self {
        1e-5
    }
}

/// `2π`.
#[inline]
pub fn two_pi<T: Real>() -> T {
    T::TAU()
}

/// Angular frequency (rad/s) from a cyclic frequency in Hz.
#[inline]
pub fn hz_to_rad<T: Real>(f_hz: T) -> T {
    f_hz * T::TAU()
}

/// Cyclic frequency in Hz from an angular frequency.
#[inline]
pub fn rad_to_hz<T: Real>(w: T) -> T {
    w / T::TAU()
}

/// Rate in 1/s from a time constant in ns.
#[inline]
pub fn rate_from_ns<T: Real>(t_ns: T) -> T {
    T::lit(1e9) / t_ns
}
