use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the numeric core is generic over: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + ScalarOperand + Debug + Display + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
