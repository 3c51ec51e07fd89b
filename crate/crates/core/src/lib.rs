//! Random feature kernels for softmax attention with data-aware projection
//! covariances, variance-optimal importance sampling, and linear attention.
//!
//! The tensor, feature-map and attention layers are generic over
//! [`Scalar`] (`f32` or `f64`). Kernel estimation, proposal optimization and
//! covariance learning work in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod attention;
pub mod features;
pub mod kernels;
pub mod learning;
pub mod sampling;
pub mod scalar;
pub mod tensor;

pub use scalar::Scalar;

/// Double-precision dense matrix.
pub type Matrix = tensor::DenseMatrix<f64>;
/// Single-precision dense matrix.
pub type Matrix32 = tensor::DenseMatrix<f32>;
pub type Features = features::FeatureMatrix<f64>;
pub type Projections = features::ProjectionSet<f64>;
pub type Attention = attention::AttentionOutput<f64>;
