//! Dense NCHW tensor kernel.
//!
//! Every map the network touches is a [`Tensor`]: a row-major
//! (batch, channels, height, width) array of finite reals. Operations are
//! pure functions; none of them mutates its input, so any of them may be
//! called concurrently on shared data.

mod ops;

pub use ops::{
    activate, batchnorm_infer, concat_channels, conv2d, maxpool, mish, sigmoid, softplus, spp,
    upsample2x, Activation,
};

use crate::scalar::Real;

/// Errors from tensor construction and the kernel operations.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
}

/// Dense rank-4 array in (batch, channels, height, width) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R: Real> {
    shape: [usize; 4],
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    /// Builds a tensor, checking length and finiteness.
    pub fn new(shape: [usize; 4], data: Vec<R>) -> Result<Self, TensorError> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(TensorError::ShapeMismatch(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                len
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![R::zero(); len],
        }
    }

    /// Fills from a function of (n, c, y, x).
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> R) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Internal constructor for values produced by the kernel itself.
    pub(crate) fn from_parts(shape: [usize; 4], data: Vec<R>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[R] {
        &self.data
    }
    pub(crate) fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> R {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: R) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts the scalar type (f64 model -> f32 disk format and back).
    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| S::from_f64(v.into_f64())).collect(),
        }
    }
}

/// 2-D convolution parameters (cross-correlation semantics, no kernel flip).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams<R: Real> {
    /// (out_channels, in_channels, kh, kw), row-major.
    pub weights: Tensor<R>,
    /// Optional per-output-channel offsets.
    pub bias: Option<Vec<R>>,
    pub stride: usize,
    /// Symmetric zero padding on both spatial axes.
    pub padding: usize,
}

impl<R: Real> Conv2dParams<R> {
    pub fn new(
        weights: Tensor<R>,
        bias: Option<Vec<R>>,
        stride: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        if stride == 0 {
            return Err(TensorError::InvalidParameter("stride must be positive".into()));
        }
        if weights.batch() == 0 {
            return Err(TensorError::InvalidParameter(
                "out_channels must be at least 1".into(),
            ));
        }
        if let Some(b) = &bias {
            if b.len() != weights.batch() {
                return Err(TensorError::ShapeMismatch(format!(
                    "bias length {} does not match out_channels {}",
                    b.len(),
                    weights.batch()
                )));
            }
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.batch()
    }
    pub fn in_channels(&self) -> usize {
        self.weights.channels()
    }
    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.height(), self.weights.width())
    }
}

/// Inference-form batch-norm parameters (per-channel affine with stored
/// statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<R: Real> {
    pub gamma: Vec<R>,
    pub beta: Vec<R>,
    pub running_mean: Vec<R>,
    pub running_var: Vec<R>,
    pub epsilon: R,
}

impl<R: Real> BatchNormParams<R> {
    pub fn new(
        gamma: Vec<R>,
        beta: Vec<R>,
        running_mean: Vec<R>,
        running_var: Vec<R>,
        epsilon: R,
    ) -> Result<Self, TensorError> {
        let c = gamma.len();
        if beta.len() != c || running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::ShapeMismatch(format!(
                "batch-norm vectors disagree on channel count: gamma {}, beta {}, mean {}, var {}",
                gamma.len(),
                beta.len(),
                running_mean.len(),
                running_var.len()
            )));
        }
        if epsilon <= R::zero() {
            return Err(TensorError::InvalidParameter("epsilon must be positive".into()));
        }
        if running_var.iter().any(|v| *v < R::zero()) {
            return Err(TensorError::InvalidParameter(
                "running variance entries must be non-negative".into(),
            ));
        }
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            epsilon,
        })
    }

    /// Identity normalization over `c` channels with the given epsilon;
    /// the default statistics used when no training has occurred.
    pub fn identity(c: usize, epsilon: R) -> Self {
        Self {
            gamma: vec![R::one(); c],
            beta: vec![R::zero(); c],
            running_mean: vec![R::zero(); c],
            running_var: vec![R::one(); c],
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::<f64>::new([1, 1, 2, 2], vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch(_)));
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::new([1, 1, 1, 2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { index: 1 }));
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_fn([2, 3, 4, 5], |n, c, y, x| {
            (((n * 3 + c) * 4 + y) * 5 + x) as f64
        });
        assert_eq!(t.at(1, 2, 3, 4), (t.len() - 1) as f64);
        assert_eq!(t.at(0, 0, 0, 1), 1.0);
    }

    #[test]
    fn batchnorm_rejects_negative_variance() {
        let err = BatchNormParams::new(vec![1.0], vec![0.0], vec![0.0], vec![-0.5], 1e-5).unwrap_err();
        assert!(matches!(err, TensorError::InvalidParameter(_)));
    }
}
