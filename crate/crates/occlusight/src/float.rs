//! Scalar abstraction for the numeric core.
//!
//! All geometry, transport and reconstruction code is generic over [`Real`],
//! which is satisfied by `f32` and `f64`. Concrete aliases for the common
//! `f64` instantiation live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the crate: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + ScalarOperand + Sum + Debug + Display + Send + Sync + 'static
{
    /// Tolerance for unit-norm and orthogonality checks on directions.
    fn geom_tol() -> Self;

    /// Shorthand for lossless-enough conversion of literal constants.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

impl Real for f64 {
    fn geom_tol() -> Self {
        1e-9
    }
}

impl Real for f32 {
    // f32 carries ~7 decimal digits; the f64 tolerance is below its epsilon.
    fn geom_tol() -> Self {
        1e-5
    }
}
