//! Dense linear algebra and deterministic Gaussian sampling.

mod decomp;
mod matrix;
mod rng;

pub use decomp::{
    cholesky_psd, sym_eig, Cholesky, SymmetricEigen, CHOLESKY_RETRIES, JACOBI_MAX_SWEEPS,
};
pub use matrix::{relative_frobenius, DenseMatrix};
pub use rng::{gaussian_sample, gaussian_sample_cov, mix64, NormalStream, SeededRng};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive semidefinite (smallest pivot {smallest_pivot:e})")]
    NotPsd { smallest_pivot: f64 },
    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

/// Empirical covariance `(1/(n−1)) Σ (x − x̄)(x − x̄)ᵀ` of the rows.
pub fn empirical_covariance<T: crate::Scalar>(x: &DenseMatrix<T>) -> DenseMatrix<T> {
    let n = x.rows();
    let mean = x.column_means();
    let centered = DenseMatrix::from_fn(n, x.cols(), |i, j| x[(i, j)] - mean[j]);
    centered
        .transpose_matmul(&centered)
        .scale(T::one() / T::of((n.max(2) - 1) as f64))
}
