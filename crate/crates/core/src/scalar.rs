//! Floating point abstraction shared by the model, engine and indicators.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// floating point: f32 or f64
///
/// `Display` must print the shortest representation that parses back to the
/// same value, which holds for both primitive float types.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + ToPrimitive
    + Debug
    + Display
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only if the value is not
    /// representable at all (never the case for finite inputs).
    #[inline]
    fn lit(value: f64) -> Self {
        <Self as NumCast>::from(value).expect("finite literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
