#![allow(dead_code)]

use darkrf_core::tensor::{gaussian_sample, DenseMatrix, SeededRng};

/// Sample mean and its standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Sample variance and its standard error from the fourth central moment.
pub fn var_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = x.iter().map(|a| (a - m).powi(4)).sum::<f64>() / n;
    (v, ((m4 - v * v).max(0.0) / n).sqrt())
}

/// Random vector scaled to norm `r`.
pub fn on_sphere(rng: SeededRng, d: usize, r: f64) -> Vec<f64> {
    let g: DenseMatrix<f64> = gaussian_sample(rng, 1, d);
    let n = g.row(0).iter().map(|x| x * x).sum::<f64>().sqrt();
    g.row(0).iter().map(|x| x * r / n).collect()
}

/// Orthogonal matrix from the eigenvectors of a random symmetric matrix.
pub fn random_rotation(rng: SeededRng, d: usize) -> DenseMatrix<f64> {
    let g: DenseMatrix<f64> = gaussian_sample(rng, d, d);
    darkrf_core::tensor::sym_eig(&g.add(&g.transpose())).unwrap().vectors
}

/// `R·diag(values)·Rᵀ`
pub fn spd_with_eigenvalues(rng: SeededRng, values: &[f64]) -> DenseMatrix<f64> {
    let d = values.len();
    let r = random_rotation(rng, d);
    DenseMatrix::from_fn(d, d, |i, j| (0..d).map(|k| r[(i, k)] * values[k] * r[(j, k)]).sum())
        .symmetrized()
}
