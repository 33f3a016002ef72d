use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point substrate for the tensor engine: f32 for training speed,
/// f64 for finite-difference gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_f64_lossy(v as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
