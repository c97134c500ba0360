//! Scalar abstraction shared by every numerical routine in the crate.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Real floating-point scalar (`f32` or `f64`).
///
/// Special functions are evaluated in double precision and rounded to `Self`,
/// which is exact for `f64` and correctly rounded for `f32`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for the finite literals used in this crate.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("finite literal")
    }

    #[inline]
    fn from_usize_lossy(value: usize) -> Self {
        Self::from_usize(value).expect("usize fits in a float")
    }

    /// Euler's gamma function.
    fn gamma(self) -> Self {
        Self::lit(libm::tgamma(self.to_f64().expect("finite")))
    }

    /// Natural logarithm of `|Γ(self)|` and the sign of `Γ(self)`.
    fn ln_gamma_signed(self) -> (Self, i32) {
        let (v, s) = libm::lgamma_r(self.to_f64().expect("finite"));
        (Self::lit(v), s)
    }
}

impl Real for f32 {}
impl Real for f64 {}
