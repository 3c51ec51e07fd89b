//! Cholesky factorization with jitter retries and cyclic Jacobi
//! eigendecomposition for symmetric matrices.

use crate::scalar::Scalar;

use super::{DenseMatrix, TensorError};

/// Maximum number of jittered retries after the first attempt.
pub const CHOLESKY_RETRIES: usize = 3;

/// Jacobi sweeps before giving up. Each sweep visits all `d(d−1)/2` pairs,
/// so the cap amounts to `≈ 50·d²` rotations.
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Lower-triangular factor `L` with `L·Lᵀ = A + jitter·I`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    pub lower: DenseMatrix<T>,
    /// Diagonal shift that was actually needed.
    pub jitter: T,
}

/// Cholesky factorization of a symmetric PSD matrix.
///
/// The first attempt uses `jitter`. On failure the diagonal is shifted by
/// `1e-12·trace(A)/d`, growing ×10 per retry, for at most
/// [`CHOLESKY_RETRIES`] retries.
pub fn cholesky_psd<T: Scalar>(a: &DenseMatrix<T>, jitter: T) -> Result<Cholesky<T>, TensorError> {
    if !a.is_square() {
        return Err(TensorError::Shape(format!("cholesky of {:?}", a.shape())));
    }
    if !a.is_symmetric(T::of(1e-12)) {
        return Err(TensorError::NotSymmetric);
    }
    let d = a.rows();
    if d == 0 {
        return Ok(Cholesky {
            lower: DenseMatrix::zeros(0, 0),
            jitter,
        });
    }
    let base = (T::of(1e-12) * a.trace() / T::of(d as f64)).abs().max(T::min_positive_value());
    let mut smallest = T::infinity();
    let mut shift = jitter;
    for attempt in 0..=CHOLESKY_RETRIES {
        if attempt > 0 {
            shift = jitter + base * T::of(10f64.powi(attempt as i32 - 1));
        }
        match factor(a, shift) {
            Ok(lower) => return Ok(Cholesky { lower, jitter: shift }),
            Err(pivot) => smallest = smallest.min(pivot),
        }
    }
    Err(TensorError::NotPsd {
        smallest_pivot: smallest.as_f64(),
    })
}

/// Plain Cholesky–Banachiewicz; `Err(pivot)` on a non-positive pivot.
fn factor<T: Scalar>(a: &DenseMatrix<T>, shift: T) -> Result<DenseMatrix<T>, T> {
    let d = a.rows();
    let mut l = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[(i, j)];
            if i == j {
                s = s + shift;
            }
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return Err(s);
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// `U·diag(λ)·Uᵀ` with eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Column `j` is the eigenvector for `values[j]`.
    pub vectors: DenseMatrix<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> SymmetricEigen<T> {
    /// `U·diag(f(λ))·Uᵀ`
    pub fn map_values(&self, f: impl Fn(T) -> T) -> DenseMatrix<T> {
        let d = self.values.len();
        let u = &self.vectors;
        let fv: Vec<T> = self.values.iter().map(|&l| f(l)).collect();
        DenseMatrix::from_fn(d, d, |i, j| {
            let mut s = T::zero();
            for k in 0..d {
                s = s + u[(i, k)] * fv[k] * u[(j, k)];
            }
            s
        })
    }

    pub fn reconstruct(&self) -> DenseMatrix<T> {
        self.map_values(|l| l)
    }

    pub fn max_value(&self) -> T {
        self.values.first().copied().unwrap_or_else(T::zero)
    }

    pub fn min_value(&self) -> T {
        self.values.last().copied().unwrap_or_else(T::zero)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig<T: Scalar>(a: &DenseMatrix<T>) -> Result<SymmetricEigen<T>, TensorError> {
    if !a.is_square() {
        return Err(TensorError::Shape(format!("sym_eig of {:?}", a.shape())));
    }
    if !a.is_symmetric(T::of(1e-10)) {
        return Err(TensorError::NotSymmetric);
    }
    let d = a.rows();
    let mut m = a.symmetrized();
    let mut v = DenseMatrix::identity(d);
    let scale = m.frobenius_norm();
    let tol = T::epsilon() * T::of(0.01) * scale;

    let off = |m: &DenseMatrix<T>| {
        let mut s = T::zero();
        for i in 0..d {
            for j in 0..i {
                s = s + m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut converged = off(&m) <= tol;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(TensorError::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = off(&m) <= tol;
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(d, d, |i, j| v[(i, order[j])]);
    Ok(SymmetricEigen { vectors, values })
}
