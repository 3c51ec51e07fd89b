//! Exact softmax and Mahalanobis kernels, and Monte Carlo kernel estimators.
//!
//! Every estimator reduces to per-feature log terms
//! `e_j = log w_j + (ω_jᵀq − h(q)) + (ω_jᵀk − h(k))`, evaluated as
//! `exp(c)·mean_j exp(e_j − c)` with `c = max_j e_j`. Unit weights contribute
//! `log 1 = 0` exactly, so weighted paths with `w ≡ 1` reproduce the plain
//! estimator bit for bit.

use thiserror::Error;

use crate::features::{FeatureError, LawKind, ProjectionLaw, ProjectionSet};
use crate::scalar::{dot, norm_sq};
use crate::tensor::{sym_eig, DenseMatrix, SymmetricEigen, TensorError};

/// Largest exponent passed to `exp`.
pub const OVERFLOW_GUARD: f64 = 700.0;

/// `Σ` counts as singular when `λ_min < SINGULAR_RATIO·λ_max`.
pub const SINGULAR_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("exponent {exponent} exceeds the overflow guard {OVERFLOW_GUARD}")]
    Overflow { exponent: f64 },
    #[error("sigma is singular (eigenvalues in [{min:e}, {max:e}])")]
    SingularSigma { min: f64, max: f64 },
    #[error("importance weight {value} at feature {index} is not positive and finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn same_dim(a: &[f64], b: &[f64]) -> Result<(), KernelError> {
    if a.len() != b.len() {
        return Err(KernelError::Dimension(format!("{} vs {}", a.len(), b.len())));
    }
    Ok(())
}

fn guarded_exp(e: f64) -> Result<f64, KernelError> {
    if e > OVERFLOW_GUARD || e.is_nan() {
        return Err(KernelError::Overflow { exponent: e });
    }
    Ok(e.exp())
}

/// `exp(qᵀk)`
pub fn softmax_kernel_exact(q: &[f64], k: &[f64]) -> Result<f64, KernelError> {
    same_dim(q, k)?;
    guarded_exp(dot(q, k))
}

/// `exp(qᵀΣk)`
pub fn sigma_kernel_exact(q: &[f64], k: &[f64], sigma: &DenseMatrix<f64>) -> Result<f64, KernelError> {
    same_dim(q, k)?;
    if sigma.shape() != (q.len(), q.len()) {
        return Err(KernelError::Dimension(format!("sigma {:?} for d={}", sigma.shape(), q.len())));
    }
    guarded_exp(sigma.bilinear(q, k))
}

/// `(x−y)ᵀΣ(x−y)`, clamped at zero against rounding.
pub fn mahalanobis_dist2(x: &[f64], y: &[f64], sigma: &DenseMatrix<f64>) -> f64 {
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    sigma.bilinear(&diff, &diff).max(0.0)
}

/// Factor `M`, `Σ = MᵀM`, and the inverse and log-determinant when `Σ ≻ 0`.
#[derive(Debug, Clone)]
pub struct SigmaGeometry {
    pub factor: DenseMatrix<f64>,
    pub sigma: DenseMatrix<f64>,
    pub eigen: SymmetricEigen<f64>,
    inverse: Option<DenseMatrix<f64>>,
    logdet: Option<f64>,
}

impl SigmaGeometry {
    pub fn from_factor(factor: DenseMatrix<f64>) -> Result<Self, KernelError> {
        let sigma = factor.transpose_matmul(&factor).symmetrized();
        let eigen = sym_eig(&sigma)?;
        let (lo, hi) = (eigen.min_value(), eigen.max_value());
        let (inverse, logdet) = if hi > 0.0 && lo >= SINGULAR_RATIO * hi {
            (
                Some(eigen.map_values(|l| 1.0 / l).symmetrized()),
                Some(eigen.values.iter().map(|l| l.ln()).sum()),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            factor,
            sigma,
            eigen,
            inverse,
            logdet,
        })
    }

    /// Geometry for a given SPD `Σ` with the symmetric square root as factor.
    pub fn from_sigma(sigma: &DenseMatrix<f64>) -> Result<Self, KernelError> {
        if !sigma.is_symmetric(1e-12) {
            return Err(TensorError::NotSymmetric.into());
        }
        let e = sym_eig(sigma)?;
        let root = e.map_values(|l| l.max(0.0).sqrt()).symmetrized();
        Self::from_factor(root)
    }

    pub fn dim(&self) -> usize {
        self.sigma.rows()
    }

    pub fn is_invertible(&self) -> bool {
        self.inverse.is_some()
    }

    fn singular(&self) -> KernelError {
        KernelError::SingularSigma {
            min: self.eigen.min_value(),
            max: self.eigen.max_value(),
        }
    }

    pub fn inverse(&self) -> Result<&DenseMatrix<f64>, KernelError> {
        self.inverse.as_ref().ok_or_else(|| self.singular())
    }

    pub fn logdet(&self) -> Result<f64, KernelError> {
        self.logdet.ok_or_else(|| self.singular())
    }

    /// `½xᵀΣx` computed as `½‖Mx‖²`.
    pub fn half_quad(&self, x: &[f64]) -> f64 {
        0.5 * norm_sq(&self.factor.matvec(x))
    }

    /// `log p_Σ(ω) − log p_I(ω) = −½ log det Σ + ½ωᵀ(I − Σ⁻¹)ω`
    pub fn log_importance_weight(&self, omega: &[f64]) -> Result<f64, KernelError> {
        let inv = self.inverse()?;
        Ok(-0.5 * self.logdet()? + 0.5 * (norm_sq(omega) - inv.bilinear(omega, omega)))
    }
}

/// `w_Σ(ω) = p_Σ(ω)/p_I(ω)`
pub fn importance_weight(omega: &[f64], geom: &SigmaGeometry) -> Result<f64, KernelError> {
    same_dim(omega, &geom.sigma.diag())?;
    geom.log_importance_weight(omega).map(f64::exp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub value: f64,
    pub m: usize,
    pub samples: Option<Vec<f64>>,
}

/// `(1/m)Σ_j exp(e_j)` evaluated as `exp(c)·mean_j exp(e_j − c)`.
pub fn mean_exp(exps: &[f64], keep_samples: bool) -> Result<KernelEstimate, KernelError> {
    let m = exps.len();
    let c = exps.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if c.is_nan() || exps.iter().any(|e| e.is_nan()) {
        return Err(KernelError::Overflow { exponent: f64::NAN });
    }
    let scale = guarded_exp(c)?;
    let sum: f64 = exps.iter().map(|&e| (e - c).exp()).sum();
    let samples = keep_samples.then(|| exps.iter().map(|&e| e.exp()).collect());
    Ok(KernelEstimate {
        value: scale * (sum / m as f64),
        m,
        samples,
    })
}

/// Per-feature log terms for input half-norms `hq`, `hk`.
fn log_terms(
    q: &[f64],
    k: &[f64],
    omegas: &DenseMatrix<f64>,
    hq: f64,
    hk: f64,
    log_w: impl Fn(usize, &[f64]) -> Result<f64, KernelError>,
) -> Result<Vec<f64>, KernelError> {
    same_dim(q, k)?;
    if omegas.cols() != q.len() {
        return Err(KernelError::Dimension(format!("projections d={} inputs d={}", omegas.cols(), q.len())));
    }
    if omegas.rows() == 0 {
        return Err(KernelError::Dimension("no projections".into()));
    }
    omegas
        .row_iter()
        .enumerate()
        .map(|(j, w)| {
            let a = dot(w, q) - hq;
            let b = dot(w, k) - hk;
            Ok(a + b + log_w(j, w)?)
        })
        .collect()
}

fn checked_log_weight(index: usize, value: f64) -> Result<f64, KernelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value.ln())
    } else {
        Err(KernelError::InvalidWeight { index, value })
    }
}

/// Positive random feature estimate of `exp(qᵀk)`.
pub fn prf_estimate(
    q: &[f64],
    k: &[f64],
    proj: &ProjectionSet<f64>,
    keep_samples: bool,
) -> Result<KernelEstimate, KernelError> {
    if let ProjectionLaw::Covariance(_) = proj.law {
        return Err(FeatureError::WrongLaw {
            map: "prf",
            law: LawKind::Covariance,
        }
        .into());
    }
    let exps = log_terms(q, k, &proj.omegas, 0.5 * norm_sq(q), 0.5 * norm_sq(k), |_, _| Ok(0.0))?;
    mean_exp(&exps, keep_samples)
}

/// Importance-weighted PRF estimate with `ω ~ ψ` and `weight_fn = p_I/ψ`.
pub fn importance_estimate(
    q: &[f64],
    k: &[f64],
    omegas: &DenseMatrix<f64>,
    weight_fn: impl Fn(&[f64]) -> f64,
    keep_samples: bool,
) -> Result<KernelEstimate, KernelError> {
    let exps = log_terms(q, k, omegas, 0.5 * norm_sq(q), 0.5 * norm_sq(k), |j, w| {
        checked_log_weight(j, weight_fn(w))
    })?;
    mean_exp(&exps, keep_samples)
}

/// As [`importance_estimate`] with weights supplied in log space.
pub fn importance_estimate_log(
    q: &[f64],
    k: &[f64],
    omegas: &DenseMatrix<f64>,
    log_weights: &[f64],
    keep_samples: bool,
) -> Result<KernelEstimate, KernelError> {
    if log_weights.len() != omegas.rows() {
        return Err(KernelError::Dimension(format!("{} weights, {} projections", log_weights.len(), omegas.rows())));
    }
    let exps = log_terms(q, k, omegas, 0.5 * norm_sq(q), 0.5 * norm_sq(k), |j, _| {
        let lw = log_weights[j];
        if lw.is_nan() || lw == f64::INFINITY {
            return Err(KernelError::InvalidWeight { index: j, value: lw.exp() });
        }
        Ok(lw)
    })?;
    mean_exp(&exps, keep_samples)
}

/// Weighting of a data-aware estimate.
#[derive(Clone, Copy)]
pub enum SigmaWeight<'a> {
    /// `w ≡ 1`
    Unit,
    /// `w = w_Σ` of the estimator's own geometry.
    DensityRatio,
    Custom(&'a dyn Fn(&[f64]) -> f64),
}

/// Data-aware estimate `(1/m)Σ_j w(ω_j)·φ_Σ(q,ω_j)·φ_Σ(k,ω_j)` with
/// `ω_j = Mᵀu_j` and `φ_Σ(x,ω) = exp(ωᵀx − ½xᵀΣx)`.
pub fn sigma_estimate(
    q: &[f64],
    k: &[f64],
    u: &DenseMatrix<f64>,
    geom: &SigmaGeometry,
    weight: SigmaWeight<'_>,
    keep_samples: bool,
) -> Result<KernelEstimate, KernelError> {
    if u.cols() != geom.factor.rows() {
        return Err(KernelError::Dimension(format!("draws r={}, factor {:?}", u.cols(), geom.factor.shape())));
    }
    let omegas = u.matmul(&geom.factor);
    sigma_estimate_realized(q, k, &omegas, geom, weight, keep_samples)
}

/// As [`sigma_estimate`] with the projections already realized; with
/// `DensityRatio` weights and isotropic `omegas` this is the importance-weighted
/// form whose expectation matches the unweighted estimator under `N(0, Σ)`.
pub fn sigma_estimate_realized(
    q: &[f64],
    k: &[f64],
    omegas: &DenseMatrix<f64>,
    geom: &SigmaGeometry,
    weight: SigmaWeight<'_>,
    keep_samples: bool,
) -> Result<KernelEstimate, KernelError> {
    if q.len() != geom.dim() {
        return Err(KernelError::Dimension(format!("inputs d={}, sigma d={}", q.len(), geom.dim())));
    }
    let (hq, hk) = (geom.half_quad(q), geom.half_quad(k));
    let exps = match weight {
        SigmaWeight::Unit => log_terms(q, k, omegas, hq, hk, |_, _| Ok(0.0))?,
        SigmaWeight::DensityRatio => log_terms(q, k, omegas, hq, hk, |_, w| geom.log_importance_weight(w))?,
        SigmaWeight::Custom(f) => log_terms(q, k, omegas, hq, hk, |j, w| checked_log_weight(j, f(w)))?,
    };
    mean_exp(&exps, keep_samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::draw_projections;
    use crate::tensor::{gaussian_sample, SeededRng};

    fn iso(seed: u64, m: usize, d: usize) -> ProjectionSet<f64> {
        draw_projections(SeededRng::new(seed, 0), m, d, &ProjectionLaw::Isotropic, false).unwrap()
    }

    #[test]
    fn softmax_exact_examples() {
        assert_eq!(softmax_kernel_exact(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(softmax_kernel_exact(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(softmax_kernel_exact(&[1.0, 1.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(
            softmax_kernel_exact(&[30.0], &[30.0]),
            Err(KernelError::Overflow { .. })
        ));
    }

    #[test]
    fn sigma_exact_examples() {
        let q = [0.3, -1.2];
        let k = [0.7, 0.4];
        assert_eq!(
            sigma_kernel_exact(&q, &k, &DenseMatrix::identity(2)).unwrap(),
            softmax_kernel_exact(&q, &k).unwrap()
        );
        assert_eq!(sigma_kernel_exact(&q, &k, &DenseMatrix::zeros(2, 2)).unwrap(), 1.0);
        let s = DenseMatrix::from_diag(&[2.0, 1.0]);
        assert_eq!(sigma_kernel_exact(&[1.0, 0.0], &[1.0, 0.0], &s).unwrap(), 2f64.exp());
    }

    #[test]
    fn mahalanobis_examples() {
        let inv = DenseMatrix::from_diag(&[0.25, 1.0]);
        assert_eq!(mahalanobis_dist2(&[3.0, 2.0], &[1.0, 0.0], &inv), 5.0);
        assert_eq!(mahalanobis_dist2(&[1.0, 2.0], &[1.0, 2.0], &inv), 0.0);
        assert_eq!(mahalanobis_dist2(&[1.0, 2.0], &[0.0, 0.0], &DenseMatrix::identity(2)), 5.0);
    }

    #[test]
    fn importance_weight_examples() {
        let id = SigmaGeometry::from_factor(DenseMatrix::identity(3)).unwrap();
        assert_eq!(importance_weight(&[0.4, -2.0, 1.0], &id).unwrap(), 1.0);
        let four = SigmaGeometry::from_sigma(&DenseMatrix::from_rows(&[[4.0]])).unwrap();
        assert!((importance_weight(&[0.0], &four).unwrap() - 0.5).abs() < 1e-15);
        let want = 0.5 * 1.5f64.exp();
        assert!((importance_weight(&[2.0], &four).unwrap() / want - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_sigma_rejected() {
        let g = SigmaGeometry::from_factor(DenseMatrix::from_rows(&[[1.0, 1.0]])).unwrap();
        assert!(!g.is_invertible());
        assert!(matches!(importance_weight(&[1.0, 0.0], &g), Err(KernelError::SingularSigma { .. })));
    }

    #[test]
    fn prf_estimate_at_origin_is_one() {
        let p = iso(1, 37, 3);
        assert_eq!(prf_estimate(&[0.0; 3], &[0.0; 3], &p, false).unwrap().value, 1.0);
    }

    #[test]
    fn prf_estimate_single_feature() {
        let p = ProjectionSet::isotropic(DenseMatrix::from_rows(&[[0.5, -1.0]]));
        let (q, k) = ([1.0, 2.0], [0.0, 1.0]);
        // (0.5 − 2 − 2.5) + (−1 − 0.5) = −5.5
        let e = prf_estimate(&q, &k, &p, true).unwrap();
        assert!((e.value - (-5.5f64).exp()).abs() < 1e-16);
        assert_eq!(e.samples.unwrap().len(), 1);
    }

    #[test]
    fn samples_average_to_value() {
        let p = iso(2, 50, 4);
        let e = prf_estimate(&[0.2, 0.1, -0.3, 0.5], &[0.4, -0.2, 0.1, 0.0], &p, true).unwrap();
        let s = e.samples.unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean / e.value - 1.0).abs() < 1e-13);
    }

    #[test]
    fn unit_weights_reproduce_prf_bitwise() {
        let p = iso(3, 64, 4);
        let x: DenseMatrix<f64> = gaussian_sample(SeededRng::new(3, 1), 2, 4);
        let (q, k) = (x.row(0), x.row(1));
        let plain = prf_estimate(q, k, &p, false).unwrap();
        let imp = importance_estimate(q, k, &p.omegas, |_| 1.0, false).unwrap();
        let geom = SigmaGeometry::from_factor(DenseMatrix::identity(4)).unwrap();
        let sig = sigma_estimate(q, k, &p.omegas, &geom, SigmaWeight::Unit, false).unwrap();
        let sig_w = sigma_estimate(q, k, &p.omegas, &geom, SigmaWeight::DensityRatio, false).unwrap();
        assert_eq!(plain.value, imp.value);
        assert_eq!(plain.value, sig.value);
        assert_eq!(plain.value, sig_w.value);
    }

    #[test]
    fn invalid_weight_rejected() {
        let p = iso(4, 8, 2);
        let err = importance_estimate(&[0.0; 2], &[0.0; 2], &p.omegas, |_| 0.0, false).unwrap_err();
        assert!(matches!(err, KernelError::InvalidWeight { index: 0, .. }));
        let err = importance_estimate(&[0.0; 2], &[0.0; 2], &p.omegas, |_| f64::NAN, false).unwrap_err();
        assert!(matches!(err, KernelError::InvalidWeight { .. }));
    }

    #[test]
    fn sigma_estimate_at_origin_is_one() {
        let m = DenseMatrix::from_rows(&[[1.0, 0.3], [0.2, 0.8], [0.0, 1.5]]);
        let geom = SigmaGeometry::from_factor(m).unwrap();
        let u: DenseMatrix<f64> = gaussian_sample(SeededRng::new(5, 0), 20, 3);
        let e = sigma_estimate(&[0.0; 2], &[0.0; 2], &u, &geom, SigmaWeight::Unit, false).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn geometry_caches_consistent() {
        let m = DenseMatrix::from_rows(&[[1.0, 0.3], [0.2, 0.8], [0.0, 1.5]]);
        let g = SigmaGeometry::from_factor(m.clone()).unwrap();
        let direct = m.transpose_matmul(&m);
        assert!(crate::tensor::relative_frobenius(&g.sigma, &direct) < 1e-12);
        let prod = g.sigma.matmul(g.inverse().unwrap());
        assert!(prod.sub(&DenseMatrix::identity(2)).max_abs() < 1e-12);
        let det = direct[(0, 0)] * direct[(1, 1)] - direct[(0, 1)] * direct[(1, 0)];
        assert!((g.logdet().unwrap() - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn overflow_is_an_error() {
        let p = ProjectionSet::isotropic(DenseMatrix::from_rows(&[[41.0]]));
        assert!(matches!(
            prf_estimate(&[10.0], &[10.0], &p, false),
            Err(KernelError::Overflow { .. })
        ));
    }
}
