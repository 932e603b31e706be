//! Scalar abstraction for the numeric core.
//!
//! Everything numeric (tensors, the tape, the attention and decoder math)
//! is generic over [`Scalar`]. The crate root pins the concrete aliases
//! used by the rest of the workbench to `f64`; gradient checking at the
//! tolerances this project uses is not reliable in single precision.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable in tensors and on the tape.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + 'static {
    /// Lossy conversion from `f64`, for constants and configuration values.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable in this scalar type")
    }

    /// Lossy conversion to `f64`, for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + 'static
{
}
