//! Input-averaged second moments `B_x(ω)`, the variance-optimal proposal
//! `ψ*`, its Gaussian closed form `N(0, Σ*)`, and variance measurement.
//!
//! For `x ~ N(0, Λ)` with `Λ = U·diag(λ)·Uᵀ` and `ω′ = Uᵀω`,
//! `B_x(ω) = E[exp(2ωᵀx − ‖x‖²)] = Π_i (2λ_i+1)^{−1/2}·exp(β_i ω′_i²)` with
//! `β_i = 2λ_i/(2λ_i+1)`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::kernels::{
    importance_estimate_log, prf_estimate, softmax_kernel_exact, KernelError, SigmaGeometry,
};
use crate::features::ProjectionSet;
use crate::scalar::{dot, norm_sq};
use crate::tensor::{gaussian_sample, sym_eig, DenseMatrix, SeededRng, SymmetricEigen, TensorError};

/// Largest admissible eigenvalue (exclusive) for which `ψ*` is a density.
pub const LAMBDA_LIMIT: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("input covariance is not PSD (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("no valid proposal: eigenvalue {lambda} >= 1/2, so p_I·B is not integrable")]
    InvalidProposal { lambda: f64 },
    #[error("variance integrand is not integrable (quadratic coefficient {coefficient} >= 0)")]
    NonIntegrable { coefficient: f64 },
    #[error("quadrature did not reach {tol:e} relative change after {nodes} nodes")]
    QuadratureNotConverged { nodes: usize, tol: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// `N(0, Λ)` law of queries and keys.
#[derive(Debug, Clone)]
pub struct GaussianInputSpec {
    pub lambda: DenseMatrix<f64>,
    pub eigen: SymmetricEigen<f64>,
}

impl GaussianInputSpec {
    pub fn new(lambda: DenseMatrix<f64>) -> Result<Self, SamplingError> {
        let eigen = sym_eig(&lambda)?;
        let tol = 1e-12 * eigen.max_value().abs().max(1.0);
        if eigen.min_value() < -tol {
            return Err(SamplingError::NotPsd(eigen.min_value()));
        }
        Ok(Self { lambda, eigen })
    }

    pub fn isotropic(d: usize, c: f64) -> Result<Self, SamplingError> {
        Self::new(DenseMatrix::identity(d).scale(c))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self, SamplingError> {
        Self::new(DenseMatrix::from_diag(values))
    }

    pub fn dim(&self) -> usize {
        self.lambda.rows()
    }

    /// Eigenvalues, descending, with rounding noise below zero clamped.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen.values.iter().map(|l| l.max(0.0)).collect()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen.max_value()
    }

    /// Whether the optimal proposal exists (`λ_max < ½`).
    pub fn has_optimal_proposal(&self) -> bool {
        self.max_eigenvalue() < LAMBDA_LIMIT
    }

    /// Row factor `F` with `FᵀF = Λ`, so `x = zF` for `z ~ N(0, I)`.
    pub fn sampling_factor(&self) -> DenseMatrix<f64> {
        let d = self.dim();
        let u = &self.eigen.vectors;
        let s: Vec<f64> = self.eigenvalues().iter().map(|l| l.sqrt()).collect();
        DenseMatrix::from_fn(d, d, |i, j| s[i] * u[(j, i)])
    }

    /// `n` iid draws `x ~ N(0, Λ)`.
    pub fn sample(&self, rng: SeededRng, n: usize) -> DenseMatrix<f64> {
        gaussian_sample(rng, n, self.dim()).matmul(&self.sampling_factor())
    }
}

/// Law of the inputs entering `B_x`.
#[derive(Debug, Clone, Copy)]
pub enum InputLaw<'a> {
    Gaussian(&'a GaussianInputSpec),
    /// Uniform over the rows of a dataset.
    Empirical(&'a DenseMatrix<f64>),
}

impl InputLaw<'_> {
    pub fn log_b(&self, omega: &[f64]) -> f64 {
        match self {
            Self::Gaussian(s) => log_gaussian_b(omega, s),
            Self::Empirical(x) => log_empirical_b(omega, x),
        }
    }
}

/// `log((1/n)Σ_i exp(2ωᵀx_i − ‖x_i‖²))` via log-sum-exp.
pub fn log_empirical_b(omega: &[f64], x: &DenseMatrix<f64>) -> f64 {
    assert!(x.rows() > 0, "empirical B needs at least one sample");
    let e: Vec<f64> = x.row_iter().map(|r| 2.0 * dot(omega, r) - norm_sq(r)).collect();
    let c = e.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    c + (e.iter().map(|v| (v - c).exp()).sum::<f64>() / x.rows() as f64).ln()
}

pub fn empirical_b(omega: &[f64], x: &DenseMatrix<f64>) -> f64 {
    log_empirical_b(omega, x).exp()
}

/// `log B_x(ω)` for `x ~ N(0, Λ)`, closed form.
pub fn log_gaussian_b(omega: &[f64], spec: &GaussianInputSpec) -> f64 {
    let u = &spec.eigen.vectors;
    spec.eigenvalues()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let w: f64 = omega.iter().enumerate().map(|(r, o)| u[(r, i)] * o).sum();
            let beta = 2.0 * l / (2.0 * l + 1.0);
            -0.5 * (2.0 * l + 1.0).ln() + beta * w * w
        })
        .sum()
}

pub fn gaussian_b(omega: &[f64], spec: &GaussianInputSpec) -> f64 {
    log_gaussian_b(omega, spec).exp()
}

/// `β = 2λ/(2λ+1)`
pub fn beta(lambda: f64) -> f64 {
    2.0 * lambda / (2.0 * lambda + 1.0)
}

/// `σ*² = (1+2λ)/(1−2λ)` for one eigenvalue.
pub fn sigma_star_scalar(lambda: f64) -> Result<f64, SamplingError> {
    if !(lambda < LAMBDA_LIMIT) {
        return Err(SamplingError::InvalidProposal { lambda });
    }
    Ok((1.0 + 2.0 * lambda) / (1.0 - 2.0 * lambda))
}

/// `Σ* = (I + 2Λ)(I − 2Λ)⁻¹`, built in the eigenbasis of `Λ`.
pub fn optimal_sigma_star(spec: &GaussianInputSpec) -> Result<DenseMatrix<f64>, SamplingError> {
    let max = spec.max_eigenvalue();
    if !(max < LAMBDA_LIMIT) {
        return Err(SamplingError::InvalidProposal { lambda: max });
    }
    Ok(spec
        .eigen
        .map_values(|l| (1.0 + 2.0 * l.max(0.0)) / (1.0 - 2.0 * l.max(0.0)))
        .symmetrized())
}

/// Unnormalized `log ψ*(ω) = −½‖ω‖² + ½(log B_q(ω) + log B_k(ω))`.
pub fn psi_star_logdensity_pair(omega: &[f64], q: InputLaw<'_>, k: InputLaw<'_>) -> f64 {
    -0.5 * norm_sq(omega) + 0.5 * (q.log_b(omega) + k.log_b(omega))
}

/// [`psi_star_logdensity_pair`] for queries and keys sharing one law.
pub fn psi_star_logdensity(omega: &[f64], law: InputLaw<'_>) -> f64 {
    psi_star_logdensity_pair(omega, law, law)
}

/// Grid and tolerance for [`variance_objective_quadrature`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Starting number of Simpson intervals (rounded up to even).
    pub initial_intervals: usize,
    pub max_doublings: usize,
    /// Relative change between successive halvings accepted as converged.
    pub rel_tol: f64,
    /// Integrand at `±T` relative to its peak.
    pub tail_ratio: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            initial_intervals: 64,
            max_doublings: 16,
            rel_tol: 1e-8,
            tail_ratio: 1e-16,
        }
    }
}

/// Quadratic coefficient `a` of `−aω²` in the log integrand of
/// `p_I²/ψ·B²` for `ψ = N(0, σ²)`; integrable iff `a > 0`.
pub fn variance_decay_coefficient(sigma2: f64, lambda: f64) -> f64 {
    1.0 - 2.0 * beta(lambda) - 0.5 / sigma2
}

fn simpson(f: &impl Fn(f64) -> f64, t: f64, n: usize) -> f64 {
    let h = 2.0 * t / n as f64;
    let mut s = f(-t) + f(t);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(-t + i as f64 * h);
    }
    s * h / 3.0
}

/// Second moment `∫ p_I(ω)²/ψ(ω) · B(ω)² dω` of a single importance-weighted
/// feature (`m = 1`, divide by `m` for an `m`-feature estimator) for `d = 1`,
/// `x ~ N(0, λ)` on both sides and `ψ = N(0, σ²)`.
///
/// Composite Simpson on `[−T, T]`, doubling the node count until successive
/// results agree to `spec.rel_tol`.
pub fn variance_objective_quadrature(sigma2: f64, lambda: f64, spec: QuadratureSpec) -> Result<f64, SamplingError> {
    if !(sigma2 > 0.0) || !(lambda >= 0.0) {
        return Err(SamplingError::Dimension(format!("sigma2={sigma2}, lambda={lambda}")));
    }
    let a = variance_decay_coefficient(sigma2, lambda);
    // coefficients within rounding of zero leave an integrand that is flat to
    // machine precision
    if !(a > 16.0 * f64::EPSILON) {
        return Err(SamplingError::NonIntegrable { coefficient: -a });
    }
    let input = GaussianInputSpec::diagonal(&[lambda])?;
    let log_p = |w: f64| -0.5 * w * w - 0.5 * (2.0 * PI).ln();
    let log_psi = |w: f64| -0.5 * w * w / sigma2 - 0.5 * (2.0 * PI * sigma2).ln();
    let f = |w: f64| (2.0 * log_p(w) - log_psi(w) + 2.0 * log_gaussian_b(&[w], &input)).exp();

    let t = (-spec.tail_ratio.ln() / a).sqrt() * 1.01;
    let mut n = (spec.initial_intervals.max(2) + 1) & !1;
    let mut prev = simpson(&f, t, n);
    for _ in 0..spec.max_doublings {
        n *= 2;
        let next = simpson(&f, t, n);
        if ((next - prev) / next).abs() < spec.rel_tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(SamplingError::QuadratureNotConverged {
        nodes: n + 1,
        tol: spec.rel_tol,
    })
}

/// Random-feature estimator of `exp(qᵀk)` evaluated by [`mc_variance`].
#[derive(Debug, Clone)]
pub enum EstimatorConfig {
    /// Returns the exact kernel; zero variance.
    Exact,
    /// `ω ~ p_I = N(0, I)`.
    Isotropic,
    /// `ω ~ N(0, S)` with importance weights `p_I/ψ`.
    Importance { proposal: DenseMatrix<f64> },
}

impl EstimatorConfig {
    pub fn id(&self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Isotropic => "p_I",
            Self::Importance { .. } => "importance",
        }
    }
}

/// Where `(q, k)` pairs come from.
#[derive(Debug, Clone, Copy)]
pub enum PairSource<'a> {
    /// Fresh `q, k ~ N(0, Λ)` every trial; measures `E_{q,k}[Var_ω]`.
    Resample(&'a GaussianInputSpec),
    /// Every pair gets `trials` feature draws; reports the pair-averaged variance.
    Fixed(&'a [(Vec<f64>, Vec<f64>)]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub estimator: String,
    pub m: usize,
    pub trials: usize,
    pub mean: f64,
    pub variance: f64,
    /// From the spread of squared errors, i.e. the fourth moment of `κ̂ − κ`.
    pub variance_se: f64,
    pub exact: f64,
}

/// Draws and evaluates one estimator.
struct Sampler {
    kind: EstimatorKind,
}

enum EstimatorKind {
    Exact,
    Isotropic,
    Importance { factor: DenseMatrix<f64>, geom: SigmaGeometry },
}

impl Sampler {
    fn new(cfg: &EstimatorConfig, d: usize) -> Result<Self, SamplingError> {
        let kind = match cfg {
            EstimatorConfig::Exact => EstimatorKind::Exact,
            EstimatorConfig::Isotropic => EstimatorKind::Isotropic,
            EstimatorConfig::Importance { proposal } => {
                if proposal.shape() != (d, d) {
                    return Err(SamplingError::Dimension(format!("proposal {:?} for d={d}", proposal.shape())));
                }
                let geom = SigmaGeometry::from_sigma(proposal)?;
                geom.inverse()?;
                EstimatorKind::Importance {
                    factor: geom.factor.clone(),
                    geom,
                }
            }
        };
        Ok(Self { kind })
    }

    fn estimate(&self, q: &[f64], k: &[f64], m: usize, rng: SeededRng) -> Result<f64, SamplingError> {
        let d = q.len();
        Ok(match &self.kind {
            EstimatorKind::Exact => softmax_kernel_exact(q, k)?,
            EstimatorKind::Isotropic => {
                let proj = ProjectionSet::isotropic(gaussian_sample(rng, m, d));
                prf_estimate(q, k, &proj, false)?.value
            }
            EstimatorKind::Importance { factor, geom } => {
                let omegas = gaussian_sample(rng, m, d).matmul(factor);
                let lw: Vec<f64> = omegas
                    .row_iter()
                    .map(|w| geom.log_importance_weight(w).map(|v| -v))
                    .collect::<Result<_, _>>()?;
                importance_estimate_log(q, k, &omegas, &lw, false)?.value
            }
        })
    }
}

/// Mean and variance of `(κ̂ − κ)²` over trials.
fn squared_error_stats(errors: &[f64]) -> (f64, f64) {
    let n = errors.len() as f64;
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo variance of an estimator around the exact softmax kernel.
///
/// Trial `t` draws features from `rng.split(t)`; in resample mode the pair
/// also comes from that stream, so two estimators run with the same `rng`
/// see the same pairs.
pub fn mc_variance(
    cfg: &EstimatorConfig,
    source: PairSource<'_>,
    m: usize,
    trials: usize,
    rng: SeededRng,
) -> Result<VarianceReport, SamplingError> {
    if trials < 2 || m == 0 {
        return Err(SamplingError::Dimension(format!("m={m}, trials={trials}")));
    }
    match source {
        PairSource::Resample(spec) => {
            let sampler = Sampler::new(cfg, spec.dim())?;
            let mut errors = Vec::with_capacity(trials);
            let (mut sum, mut exact_sum) = (0.0, 0.0);
            for t in 0..trials {
                let trial = rng.split(t as u64);
                let pair = spec.sample(trial.split_named("pair"), 2);
                let (q, k) = (pair.row(0), pair.row(1));
                let exact = softmax_kernel_exact(q, k)?;
                let est = sampler.estimate(q, k, m, trial.split_named("features"))?;
                errors.push(est - exact);
                sum += est;
                exact_sum += exact;
            }
            let (variance, variance_se) = squared_error_stats(&errors);
            Ok(VarianceReport {
                estimator: cfg.id().into(),
                m,
                trials,
                mean: sum / trials as f64,
                variance,
                variance_se,
                exact: exact_sum / trials as f64,
            })
        }
        PairSource::Fixed(pairs) => {
            if pairs.is_empty() {
                return Err(SamplingError::Dimension("empty pair list".into()));
            }
            let sampler = Sampler::new(cfg, pairs[0].0.len())?;
            let p = pairs.len() as f64;
            let (mut var_sum, mut se2_sum, mut mean_sum, mut exact_sum) = (0.0, 0.0, 0.0, 0.0);
            for (i, (q, k)) in pairs.iter().enumerate() {
                let exact = softmax_kernel_exact(q, k)?;
                let mut errors = Vec::with_capacity(trials);
                let mut sum = 0.0;
                for t in 0..trials {
                    let trial = rng.split(t as u64).split(i as u64);
                    let est = sampler.estimate(q, k, m, trial.split_named("features"))?;
                    errors.push(est - exact);
                    sum += est;
                }
                let (v, se) = squared_error_stats(&errors);
                var_sum += v;
                se2_sum += se * se;
                mean_sum += sum / trials as f64;
                exact_sum += exact;
            }
            Ok(VarianceReport {
                estimator: cfg.id().into(),
                m,
                trials,
                mean: mean_sum / p,
                variance: var_sum / p,
                variance_se: se2_sum.sqrt() / p,
                exact: exact_sum / p,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(sigma2: f64, lambda: f64) -> Result<f64, SamplingError> {
        variance_objective_quadrature(sigma2, lambda, QuadratureSpec::default())
    }

    #[test]
    fn b_examples() {
        let x = DenseMatrix::zeros(1, 3);
        assert_eq!(empirical_b(&[0.3, 1.0, -2.0], &x), 1.0);
        let zero = GaussianInputSpec::isotropic(2, 0.0).unwrap();
        assert_eq!(gaussian_b(&[1.0, -3.0], &zero), 1.0);
        let s = GaussianInputSpec::diagonal(&[0.25]).unwrap();
        assert!((gaussian_b(&[0.0], &s) - 1.5f64.powf(-0.5)).abs() < 1e-15);
        assert!((beta(0.25) - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn empirical_b_at_zero_omega() {
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        let want = ((-1.0f64).exp() + (-4.0f64).exp()) / 2.0;
        assert!((empirical_b(&[0.0, 0.0], &x) - want).abs() < 1e-16);
    }

    #[test]
    fn sigma_star_examples() {
        let zero = GaussianInputSpec::isotropic(3, 0.0).unwrap();
        assert_eq!(optimal_sigma_star(&zero).unwrap(), DenseMatrix::identity(3));
        let q = GaussianInputSpec::isotropic(2, 0.25).unwrap();
        let s = optimal_sigma_star(&q).unwrap();
        assert!(s.sub(&DenseMatrix::identity(2).scale(3.0)).max_abs() < 1e-14);
        let dg = GaussianInputSpec::diagonal(&[0.1, 0.4]).unwrap();
        let s = optimal_sigma_star(&dg).unwrap();
        assert!(s.sub(&DenseMatrix::from_diag(&[1.5, 9.0])).max_abs() < 1e-13);
        let bad = GaussianInputSpec::diagonal(&[0.5, 0.1]).unwrap();
        assert!(matches!(optimal_sigma_star(&bad), Err(SamplingError::InvalidProposal { .. })));
    }

    #[test]
    fn psi_star_one_dimensional_exponent() {
        let s = GaussianInputSpec::diagonal(&[0.25]).unwrap();
        let law = InputLaw::Gaussian(&s);
        let base = psi_star_logdensity(&[0.0], law);
        for w in [-3.0, -0.5, 0.7, 2.0] {
            let got = psi_star_logdensity(&[w], law) - base;
            assert!((got + w * w / 6.0).abs() < 1e-14);
        }
    }

    #[test]
    fn psi_star_isotropic_limit() {
        let s = GaussianInputSpec::isotropic(2, 0.0).unwrap();
        let w = [0.4, -1.1];
        assert_eq!(psi_star_logdensity(&w, InputLaw::Gaussian(&s)), -0.5 * norm_sq(&w));
    }

    /// `V = (2π)^{−1}·√(2πσ²)·(2λ+1)^{−1}·√(π/a)`
    fn closed_form_v(sigma2: f64, lambda: f64) -> f64 {
        let a = variance_decay_coefficient(sigma2, lambda);
        (2.0 * PI * sigma2).sqrt() / (2.0 * PI) / (2.0 * lambda + 1.0) * (PI / a).sqrt()
    }

    #[test]
    fn quadrature_matches_gaussian_integral() {
        for &(s2, l) in &[(1.0, 0.0), (3.0, 0.25), (2.0, 0.1), (9.0, 0.4), (1.5, 0.05)] {
            let got = quad(s2, l).unwrap();
            let want = closed_form_v(s2, l);
            assert!((got / want - 1.0).abs() < 1e-9, "σ²={s2} λ={l}: {got} vs {want}");
        }
    }

    #[test]
    fn quadrature_isotropic_value() {
        // λ = 0, σ² = 1: ∫ p_I dω = 1
        assert!((quad(1.0, 0.0).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quadrature_rejects_heavy_tails() {
        assert!(matches!(quad(1.0, 0.25), Err(SamplingError::NonIntegrable { .. })));
        assert!(matches!(quad(0.4, 0.0), Err(SamplingError::NonIntegrable { .. })));
    }

    #[test]
    fn exact_estimator_has_zero_variance() {
        let s = GaussianInputSpec::diagonal(&[0.2, 0.1]).unwrap();
        let r = mc_variance(&EstimatorConfig::Exact, PairSource::Resample(&s), 8, 100, SeededRng::new(1, 0)).unwrap();
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.variance_se, 0.0);
    }

    #[test]
    fn identity_proposal_matches_isotropic() {
        let s = GaussianInputSpec::diagonal(&[0.2, 0.1]).unwrap();
        let rng = SeededRng::new(2, 0);
        let a = mc_variance(&EstimatorConfig::Isotropic, PairSource::Resample(&s), 16, 200, rng).unwrap();
        let imp = EstimatorConfig::Importance {
            proposal: DenseMatrix::identity(2),
        };
        let b = mc_variance(&imp, PairSource::Resample(&s), 16, 200, rng).unwrap();
        assert!((a.variance / b.variance - 1.0).abs() < 1e-12);
    }
}
