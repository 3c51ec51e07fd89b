mod common;

use common::{mean_se, on_sphere, spd_with_eigenvalues};
use darkrf_core::features::{draw_projections, ProjectionLaw, ProjectionSet};
use darkrf_core::kernels::{
    importance_estimate, importance_weight, mahalanobis_dist2, prf_estimate, sigma_estimate, sigma_estimate_realized,
    sigma_kernel_exact, softmax_kernel_exact, SigmaGeometry, SigmaWeight,
};
use darkrf_core::sampling::{mc_variance, optimal_sigma_star, EstimatorConfig, GaussianInputSpec, PairSource};
use darkrf_core::tensor::{gaussian_sample, gaussian_sample_cov, DenseMatrix, SeededRng};
use proptest::prelude::*;

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, d)
}

fn factor_strategy(d: usize) -> impl Strategy<Value = DenseMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| DenseMatrix::from_vec(d, d, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn polarization_identity(x in vec_strategy(4), y in vec_strategy(4), m in factor_strategy(4)) {
        let s = m.transpose_matmul(&m);
        let zero = [0.0; 4];
        let (nx, ny, nd) = (mahalanobis_dist2(&x, &zero, &s), mahalanobis_dist2(&y, &zero, &s), mahalanobis_dist2(&x, &y, &s));
        let lhs = s.bilinear(&x, &y);
        let rhs = 0.5 * (nx + ny - nd);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (nx + ny + nd).max(1.0), "{lhs} vs {rhs}");
        prop_assert!(nd >= 0.0);
    }

    #[test]
    fn factor_identity(q in vec_strategy(3), k in vec_strategy(3), m in factor_strategy(3)) {
        let a = sigma_kernel_exact(&q, &k, &m.transpose_matmul(&m)).unwrap();
        let b = softmax_kernel_exact(&m.matvec(&q), &m.matvec(&k)).unwrap();
        prop_assert!((a / b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimates_positive(seed in any::<u64>(), q in vec_strategy(3), k in vec_strategy(3), m in factor_strategy(3)) {
        let r = SeededRng::new(seed, 0);
        let p = draw_projections(r, 8, 3, &ProjectionLaw::Isotropic, false).unwrap();
        prop_assert!(prf_estimate(&q, &k, &p, false).unwrap().value > 0.0);
        let g = SigmaGeometry::from_factor(m).unwrap();
        prop_assert!(sigma_estimate(&q, &k, &p.omegas, &g, SigmaWeight::Unit, false).unwrap().value > 0.0);
        prop_assert!(importance_estimate(&q, &k, &p.omegas, |_| 0.7, false).unwrap().value > 0.0);
    }

    #[test]
    fn density_ratio_positive(w in vec_strategy(2), a in 0.3f64..3.0, b in 0.3f64..3.0) {
        let g = SigmaGeometry::from_sigma(&DenseMatrix::from_diag(&[a, b])).unwrap();
        let v = importance_weight(&w, &g).unwrap();
        let want = (a * b).powf(-0.5) * (0.5 * (w[0] * w[0] * (1.0 - 1.0 / a) + w[1] * w[1] * (1.0 - 1.0 / b))).exp();
        prop_assert!(v > 0.0 && (v / want - 1.0).abs() < 1e-12);
    }
}

fn check(label: &str, samples: &[f64], exact: f64) {
    let (m, se) = mean_se(samples);
    assert!((m - exact).abs() <= 3.0 * se, "{label}: mean {m}, exact {exact}, se {se}");
}

/// log(p_I/ψ) for ψ = N(0, S).
fn inverse_ratio(g: &SigmaGeometry) -> impl Fn(&[f64]) -> f64 + '_ {
    move |w| 1.0 / importance_weight(w, g).unwrap()
}

#[test]
fn unbiasedness_triple() {
    let (d, m, trials) = (3, 16, 1000);
    let base = SeededRng::new(200, 0);
    for c in 0..20 {
        let r = base.split(c);
        let q = on_sphere(r.split(0), d, 0.6);
        let k = on_sphere(r.split(1), d, 0.6);
        let sigma = spd_with_eigenvalues(r.split(2), &[1.4, 0.8, 0.4]);
        let geom = SigmaGeometry::from_sigma(&sigma).unwrap();
        let proposal = SigmaGeometry::from_sigma(&spd_with_eigenvalues(r.split(3), &[2.0, 1.5, 1.0])).unwrap();
        let ratio = inverse_ratio(&proposal);
        let (mut plain, mut imp, mut sig) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..trials {
            let tr = r.split(10 + t);
            let p = ProjectionSet::isotropic(gaussian_sample(tr.split(0), m, d));
            plain.push(prf_estimate(&q, &k, &p, false).unwrap().value);
            let w = gaussian_sample_cov(tr.split(1), m, &proposal.factor);
            imp.push(importance_estimate(&q, &k, &w, &ratio, false).unwrap().value);
            let u = gaussian_sample(tr.split(2), m, d);
            sig.push(sigma_estimate(&q, &k, &u, &geom, SigmaWeight::Unit, false).unwrap().value);
        }
        let exact = softmax_kernel_exact(&q, &k).unwrap();
        check(&format!("prf {c}"), &plain, exact);
        check(&format!("importance {c}"), &imp, exact);
        check(&format!("sigma {c}"), &sig, sigma_kernel_exact(&q, &k, &sigma).unwrap());
    }
}

#[test]
fn weighted_isotropic_matches_unweighted_sigma_draws() {
    let (d, m, trials) = (3, 16, 2000);
    let base = SeededRng::new(201, 0);
    for c in 0..3 {
        let r = base.split(c);
        let sigma = spd_with_eigenvalues(r.split(0), &[1.3, 0.9, 0.6]);
        let geom = SigmaGeometry::from_sigma(&sigma).unwrap();
        let q = on_sphere(r.split(1), d, 0.7);
        let k = on_sphere(r.split(2), d, 0.7);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for t in 0..trials {
            let u = gaussian_sample(r.split(10 + t), m, d);
            a.push(sigma_estimate(&q, &k, &u, &geom, SigmaWeight::Unit, false).unwrap().value);
            let w = gaussian_sample(r.split_named("iso").split(t), m, d);
            b.push(sigma_estimate_realized(&q, &k, &w, &geom, SigmaWeight::DensityRatio, false).unwrap().value);
        }
        let exact = sigma_kernel_exact(&q, &k, &sigma).unwrap();
        let ((ma, sa), (mb, sb)) = (mean_se(&a), mean_se(&b));
        assert!((ma - mb).abs() <= 3.0 * (sa * sa + sb * sb).sqrt(), "{ma} vs {mb}");
        check("unweighted", &a, exact);
        check("weighted", &b, exact);
    }
}

#[test]
fn broad_proposal_unbiased() {
    let r = SeededRng::new(202, 0);
    let q = on_sphere(r.split(0), 2, 0.8);
    let k = on_sphere(r.split(1), 2, 0.6);
    let proposal = SigmaGeometry::from_sigma(&DenseMatrix::identity(2).scale(2.0)).unwrap();
    let ratio = inverse_ratio(&proposal);
    let est: Vec<f64> = (0..1000)
        .map(|t| {
            let w = gaussian_sample_cov(r.split(10 + t), 16, &proposal.factor);
            importance_estimate(&q, &k, &w, &ratio, false).unwrap().value
        })
        .collect();
    check("N(0,2I)", &est, softmax_kernel_exact(&q, &k).unwrap());
}

#[test]
fn optimal_proposal_unbiased_and_lower_variance() {
    let spec = GaussianInputSpec::isotropic(2, 0.25).unwrap();
    let star = optimal_sigma_star(&spec).unwrap();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = {
        let x = spec.sample(SeededRng::new(203, 0), 40);
        (0..20).map(|i| (x.row(2 * i).to_vec(), x.row(2 * i + 1).to_vec())).collect()
    };
    let rng = SeededRng::new(203, 1);
    let iso = mc_variance(&EstimatorConfig::Isotropic, PairSource::Fixed(&pairs), 16, 1000, rng).unwrap();
    let opt = mc_variance(&EstimatorConfig::Importance { proposal: star.clone() }, PairSource::Fixed(&pairs), 16, 1000, rng)
        .unwrap();
    assert!(opt.variance < iso.variance, "{} vs {}", opt.variance, iso.variance);

    let (q, k) = &pairs[0];
    let geom = SigmaGeometry::from_sigma(&star).unwrap();
    let ratio = inverse_ratio(&geom);
    let est: Vec<f64> = (0..1000)
        .map(|t| {
            let w = gaussian_sample_cov(rng.split(t), 16, &geom.factor);
            importance_estimate(q, k, &w, &ratio, false).unwrap().value
        })
        .collect();
    check("psi*", &est, softmax_kernel_exact(q, k).unwrap());
}
