mod common;

use common::{mean_se, random_rotation, spd_with_eigenvalues};
use darkrf_core::sampling::{
    empirical_b, gaussian_b, mc_variance, optimal_sigma_star, psi_star_logdensity, sigma_star_scalar, variance_decay_coefficient,
    variance_objective_quadrature, EstimatorConfig, GaussianInputSpec, InputLaw, PairSource, QuadratureSpec,
    SamplingError,
};
use darkrf_core::tensor::{gaussian_sample, DenseMatrix, SeededRng};
use proptest::prelude::*;

fn eigen_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..0.45, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigma_star_shares_eigenbasis(seed in any::<u64>(), values in eigen_strategy(4)) {
        let lambda = spd_with_eigenvalues(SeededRng::new(seed, 0), &values);
        let spec = GaussianInputSpec::new(lambda).unwrap();
        let star = optimal_sigma_star(&spec).unwrap();
        for (i, &l) in spec.eigen.values.iter().enumerate() {
            let u = spec.eigen.vectors.column(i);
            let su = star.matvec(&u);
            let s = (1.0 + 2.0 * l) / (1.0 - 2.0 * l);
            for (a, b) in su.iter().zip(&u) {
                prop_assert!((a - s * b).abs() < 1e-9 * s);
            }
        }
    }

    #[test]
    fn psi_star_is_gaussian_sigma_star(seed in any::<u64>(), values in eigen_strategy(3)) {
        let lambda = spd_with_eigenvalues(SeededRng::new(seed, 0), &values);
        let spec = GaussianInputSpec::new(lambda).unwrap();
        let star = optimal_sigma_star(&spec).unwrap();
        let inv = darkrf_core::tensor::sym_eig(&star).unwrap().map_values(|l| 1.0 / l);
        let grid: DenseMatrix<f64> = gaussian_sample(SeededRng::new(seed, 1), 30, 3);
        let diffs: Vec<f64> = grid
            .row_iter()
            .map(|w| psi_star_logdensity(w, InputLaw::Gaussian(&spec)) + 0.5 * inv.bilinear(w, w))
            .collect();
        let ratios: Vec<f64> = diffs.iter().map(|d| (d - diffs[0]).exp()).collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, f64::MIN), |(a, b), &r| (a.min(r), b.max(r)));
        prop_assert!(hi - lo < 1e-9, "spread {}", hi - lo);
    }
}

fn off_isotropy(s: &DenseMatrix<f64>) -> f64 {
    let t = s.trace() / s.rows() as f64;
    s.sub(&DenseMatrix::identity(s.rows()).scale(t)).frobenius_norm()
}

#[test]
fn isotropic_iff() {
    let r = random_rotation(SeededRng::new(300, 0), 3);
    let rotate = |v: &[f64]| {
        let d = DenseMatrix::from_diag(v);
        r.matmul(&d).matmul_transposed(&r).symmetrized()
    };
    for lam in [DenseMatrix::identity(3).scale(0.2), rotate(&[0.2, 0.2, 0.2])] {
        let s = optimal_sigma_star(&GaussianInputSpec::new(lam).unwrap()).unwrap();
        assert!(off_isotropy(&s) < 1e-12);
    }
    for lam in [DenseMatrix::from_diag(&[0.2, 0.1, 0.2]), rotate(&[0.3, 0.1, 0.2])] {
        let s = optimal_sigma_star(&GaussianInputSpec::new(lam).unwrap()).unwrap();
        assert!(off_isotropy(&s) > 0.1);
    }
}

#[test]
fn quadrature_argmin_tracks_sigma_star() {
    let spec = QuadratureSpec::default();
    let mut last = 0.0;
    for lambda in [0.05, 0.15, 0.25, 0.35, 0.45] {
        let star = sigma_star_scalar(lambda).unwrap();
        assert!(star > last);
        last = star;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=490 {
            let s2 = 0.5 + 0.05 * i as f64;
            match variance_objective_quadrature(s2, lambda, spec) {
                Ok(v) if v < best.0 => best = (v, s2),
                Ok(_) | Err(SamplingError::NonIntegrable { .. }) => {}
                // V diverges at the integrability edge; cells there are never the minimum
                Err(SamplingError::QuadratureNotConverged { .. })
                    if variance_decay_coefficient(s2, lambda) < 1e-6 => {}
                Err(e) => panic!("σ²={s2}: {e}"),
            }
        }
        assert!((best.1 - star).abs() <= 0.05, "λ={lambda}: argmin {} vs {star}", best.1);
    }
}

#[test]
fn isotropic_limit_minimized_at_one() {
    let spec = QuadratureSpec::default();
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=190 {
        let s2 = 0.55 + 0.05 * i as f64;
        let v = variance_objective_quadrature(s2, 1e-9, spec).unwrap();
        if v < best.0 {
            best = (v, s2);
        }
    }
    assert!((best.1 - 1.0).abs() < 0.025 + 1e-12, "{}", best.1);
}

#[test]
fn empirical_b_converges_to_closed_form() {
    let spec = GaussianInputSpec::diagonal(&[0.25]).unwrap();
    let want = gaussian_b(&[1.0], &spec);
    assert!((want - 1.5f64.powf(-0.5) * (1.0f64 / 3.0).exp()).abs() < 1e-15);
    for (i, n) in [10_000, 100_000, 1_000_000].into_iter().enumerate() {
        let x = spec.sample(SeededRng::new(301, i as u64), n);
        let terms: Vec<f64> = x.row_iter().map(|r| (2.0 * r[0] - r[0] * r[0]).exp()).collect();
        let (m, se) = mean_se(&terms);
        assert!((empirical_b(&[1.0], &x) / m - 1.0).abs() < 1e-12);
        assert!((m - want).abs() <= 3.0 * se, "n={n}: {m} vs {want} (se {se})");
    }
}

#[test]
fn empirical_b_zero_omega() {
    let x = gaussian_sample::<f64>(SeededRng::new(302, 0), 50, 3);
    let b = empirical_b(&[0.0; 3], &x);
    let want = x.row_iter().map(|r| (-r.iter().map(|v| v * v).sum::<f64>()).exp()).sum::<f64>() / 50.0;
    assert!(b > 0.0 && b <= 1.0 && (b / want - 1.0).abs() < 1e-12);
}

#[test]
fn optimal_proposal_has_lower_expected_variance() {
    let spec = GaussianInputSpec::diagonal(&[0.3, 0.1]).unwrap();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = {
        let x = spec.sample(SeededRng::new(303, 0), 40);
        (0..20).map(|i| (x.row(2 * i).to_vec(), x.row(2 * i + 1).to_vec())).collect()
    };
    let rng = SeededRng::new(303, 1);
    let star = optimal_sigma_star(&spec).unwrap();
    let iso = mc_variance(&EstimatorConfig::Isotropic, PairSource::Fixed(&pairs), 64, 2000, rng).unwrap();
    let opt = mc_variance(&EstimatorConfig::Importance { proposal: star }, PairSource::Fixed(&pairs), 64, 2000, rng).unwrap();
    let se = (iso.variance_se.powi(2) + opt.variance_se.powi(2)).sqrt();
    assert!(iso.variance - opt.variance >= 2.0 * se, "{} vs {} (se {se})", iso.variance, opt.variance);
}

#[test]
fn resample_mode_reports_mean_near_exact() {
    let spec = GaussianInputSpec::diagonal(&[0.1, 0.1]).unwrap();
    let r = mc_variance(&EstimatorConfig::Isotropic, PairSource::Resample(&spec), 32, 2000, SeededRng::new(304, 0)).unwrap();
    assert!(r.variance >= 0.0 && r.variance_se >= 0.0);
    assert!((r.mean - r.exact).abs() < 0.05 * r.exact);
}
