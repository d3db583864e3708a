//! Scalar abstraction for the numeric kernels.

use num_traits::{Float, NumAssignOps};

/// Floating-point scalar the tensor kernels are generic over: f32 or f64.
pub trait Real:
    Float + NumAssignOps + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Lossy conversion from f64 (used when materializing parameters so the
    /// random stream is identical across precisions).
    fn from_f64(v: f64) -> Self;
    /// Widening conversion for reductions and reports.
    fn into_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}
