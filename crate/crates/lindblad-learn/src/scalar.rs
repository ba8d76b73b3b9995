//! Scalar abstractions shared by the generic numerical kernels.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_rational::{BigRational, Ratio};
use num_traits::{Float, FromPrimitive, One, Signed, ToPrimitive, Zero};

/// Floating-point scalar for the Chebyshev machinery.
pub trait Real: Float + FromPrimitive + Debug + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Field arithmetic with a pivot test, used by elimination and LU.
///
/// Floating types treat entries below a relative tolerance as zero; exact
/// rationals compare against zero directly.
pub trait Field:
    Clone
    + Debug
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    /// Magnitude used for pivot selection and tolerances.
    fn magnitude(&self) -> f64;

    /// True when `self` must be treated as zero given the largest entry seen.
    fn negligible(&self, scale: f64) -> bool;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(&self) -> f64;
}

/// Relative pivot threshold for floating-point elimination.
pub const PIVOT_TOLERANCE: f64 = 1e-9;

macro_rules! float_field {
    ($t:ty) => {
        impl Field for $t {
            fn magnitude(&self) -> f64 {
                self.abs() as f64
            }
            fn negligible(&self, scale: f64) -> bool {
                (self.abs() as f64) <= PIVOT_TOLERANCE * scale.max(f64::MIN_POSITIVE)
            }
            fn from_f64_lossy(v: f64) -> Self {
                v as $t
            }
            fn to_f64_lossy(&self) -> f64 {
                *self as f64
            }
        }
    };
}

float_field!(f32);
float_field!(f64);

impl Field for Ratio<i64> {
    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::INFINITY)
    }
    fn negligible(&self, _scale: f64) -> bool {
        self.is_zero()
    }
    fn from_f64_lossy(v: f64) -> Self {
        Ratio::approximate_float(v).expect("finite value")
    }
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Field for BigRational {
    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::INFINITY)
    }
    fn negligible(&self, _scale: f64) -> bool {
        self.is_zero()
    }
    fn from_f64_lossy(v: f64) -> Self {
        BigRational::from_float(v).expect("finite value")
    }
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}
