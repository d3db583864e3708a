//! cayk: a framework-free detection-pipeline toolkit.
//!
//! The crate is organized around the stages of a one-stage detector:
//!
//! - [`tensor`] — dense NCHW array kernel (convolution, batch norm,
//!   activations, pooling, SPP, upsampling, concatenation)
//! - [`attention`] — coordinate attention block: directional pooling,
//!   gated forward pass, and an analytic backward pass
//! - [`graph`] — the detector computation graph (CSP backbone with
//!   attention insertions, SPP neck, PAN fusion, three heads) with
//!   shape and parameter audits
//! - [`anchors`] — 1-IoU K-means clustering of box sizes into anchor sets
//! - [`voc`] — Pascal VOC annotation ingestion, dataset statistics, and
//!   box-aware augmentation
//! - [`eval`] — head decoding, NMS, greedy matching, and AP/mAP reports
//!
//! Numeric kernels are generic over the scalar type via [`scalar::Real`];
//! the crate-root aliases fix f64 as the default precision, with f32
//! reserved for the bench harness.

pub mod anchors;
pub mod attention;
pub mod eval;
pub mod graph;
pub mod scalar;
pub mod tensor;
pub mod voc;

pub use scalar::Real;

/// Default-precision feature map (f64).
pub type FeatureMap = tensor::Tensor<f64>;
/// Single-precision feature map for the bench harness.
pub type FeatureMap32 = tensor::Tensor<f32>;

/// Default-precision convolution parameters.
pub type ConvParams = tensor::Conv2dParams<f64>;
/// Default-precision batch-norm parameters.
pub type BNParams = tensor::BatchNormParams<f64>;
/// Default-precision coordinate-attention parameters.
pub type CAParams = attention::CoordAttentionParams<f64>;
/// Default-precision model.
pub type Model = graph::Model<f64>;

/// Toolkit version string recorded in run manifests and weight files.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
