//! Scalar abstraction for the geometric kernels.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the geometry kernels: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    /// Lossy conversion back to `f64` for reporting and image-space work.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// A tolerance that is `tol` for `f64` and never below a few ulps of `Self`.
    #[inline]
    fn tol(tol: f64) -> Self {
        let eps = Self::default_epsilon() * Self::lit(16.0);
        let t = Self::lit(tol);
        if t > eps {
            t
        } else {
            eps
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
