//! `variance-sweep`: Monte Carlo variance of the softmax-kernel estimator
//! under the isotropic law, the optimal Gaussian proposal and the plug-in
//! proposal `N(0, Λ̂⁻¹)`.

use darkrf_core::learning::{estimate_lambda, plugin_whitening};
use darkrf_core::sampling::{
    mc_variance, optimal_sigma_star, variance_objective_quadrature, EstimatorConfig, GaussianInputSpec, PairSource,
    QuadratureSpec, SamplingError,
};
use darkrf_core::tensor::{DenseMatrix, SeededRng};

use super::par_cells;
use crate::config::List;
use crate::lambda::LambdaSpec;
use crate::table::{f, Table};
use crate::HarnessError;

crate::settings! {
    /// `variance-sweep` settings.
    VarianceConfig, VarianceArgs, "variance-sweep" {
        /// Base seed
        seed: u64 = 0,
        /// Input covariances, separated by ';'
        lambdas: List<LambdaSpec> = List(vec![
            LambdaSpec::Diagonal(vec![0.3, 0.1]),
            LambdaSpec::Diagonal(vec![0.25, 0.25]),
            LambdaSpec::RandomSpd { seed: 1, condition: 4.0, max: 0.45 },
        ]),
        /// Dimension for isotropic and random_spd covariances
        d: usize = 2,
        /// Feature counts
        ms: List<usize> = List(vec![1, 4, 16, 64]),
        /// Feature draws per (q, k) pair
        trials: usize = 2000,
        /// Fixed (q, k) pairs per covariance; 0 draws a fresh pair every trial
        pairs: usize = 20,
        /// Any of p_I, psi_star, plugin
        samplers: List<String> = List(vec!["p_I".into(), "psi_star".into(), "plugin".into()]),
        /// Rows per side used to estimate Λ for the plugin sampler
        plugin_samples: usize = 1000,
        /// Shrinkage of the plugin estimate toward a scaled identity
        shrinkage: f64 = 0.0,
    }
}

pub const COLUMNS: &[&str] = &[
    "lambda", "d", "sampler", "m", "trials", "pairs", "mean", "exact", "variance", "variance_se", "quad_v", "quad_var",
];

struct Setup {
    label: String,
    spec: GaussianInputSpec,
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// `(sampler, proposal)`; `None` is the isotropic law.
    samplers: Vec<(String, Option<DenseMatrix<f64>>)>,
}

fn setup(cfg: &VarianceConfig, li: usize, lambda: &LambdaSpec, base: SeededRng) -> Result<Setup, HarnessError> {
    let d = lambda.implied_dim().unwrap_or(cfg.d);
    let spec = lambda.input_spec(d)?;
    let x = spec.sample(base.split_named("pairs").split(li as u64), 2 * cfg.pairs);
    let pairs = (0..cfg.pairs).map(|i| (x.row(2 * i).to_vec(), x.row(2 * i + 1).to_vec())).collect();
    let mut samplers = Vec::new();
    for name in cfg.samplers.iter() {
        let proposal = match name.as_str() {
            "p_I" => None,
            "psi_star" => match optimal_sigma_star(&spec) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("{lambda}: skipping psi_star ({e})");
                    continue;
                }
            },
            "plugin" => {
                let r = base.split_named("plugin").split(li as u64);
                let xq = spec.sample(r.split_named("q"), cfg.plugin_samples);
                let xk = spec.sample(r.split_named("k"), cfg.plugin_samples);
                match estimate_lambda(&xq, &xk, cfg.shrinkage).and_then(|l| plugin_whitening(&l)) {
                    Ok(fac) => Some(fac.sigma()),
                    Err(e) => {
                        log::warn!("{lambda}: skipping plugin ({e})");
                        continue;
                    }
                }
            }
            other => return Err(HarnessError::BadConfig(format!("unknown sampler {other:?}"))),
        };
        samplers.push((name.clone(), proposal));
    }
    Ok(Setup {
        label: lambda.to_string(),
        spec,
        pairs,
        samplers,
    })
}

/// Second moment of one feature and the resulting variance at `m`, for
/// `d = 1` only.
fn quadrature_reference(lambda: f64, sigma2: f64, m: usize) -> (f64, f64) {
    let v = match variance_objective_quadrature(sigma2, lambda, QuadratureSpec::default()) {
        Ok(v) => v,
        Err(SamplingError::NonIntegrable { .. }) => f64::INFINITY,
        Err(e) => {
            log::warn!("quadrature at λ={lambda}, σ²={sigma2}: {e}");
            f64::NAN
        }
    };
    // E exp(2qk) for independent q, k ~ N(0, λ)
    let kappa2 = 1.0 / (1.0 - 4.0 * lambda * lambda).sqrt();
    (v, (v - kappa2) / m as f64)
}

pub fn run(cfg: &VarianceConfig) -> Result<Table, HarnessError> {
    if cfg.trials < 2 {
        return Err(HarnessError::BadConfig("trials must be at least 2".into()));
    }
    let base = SeededRng::new(cfg.seed, 0);
    let setups = cfg
        .lambdas
        .iter()
        .enumerate()
        .map(|(li, l)| setup(cfg, li, l, base))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::new();
    for (li, s) in setups.iter().enumerate() {
        for si in 0..s.samplers.len() {
            for &m in cfg.ms.iter() {
                cells.push((li, si, m));
            }
        }
    }
    let rows = par_cells(&cells, |&(li, si, m)| {
        let s = &setups[li];
        let (name, proposal) = &s.samplers[si];
        let est = match proposal {
            None => EstimatorConfig::Isotropic,
            Some(p) => EstimatorConfig::Importance { proposal: p.clone() },
        };
        let source = if cfg.pairs == 0 {
            PairSource::Resample(&s.spec)
        } else {
            PairSource::Fixed(&s.pairs)
        };
        let rng = base.split_named("mc").split(li as u64).split(m as u64);
        let rep = mc_variance(&est, source, m, cfg.trials, rng)?;
        let d = s.spec.dim();
        let (qv, qvar) = if d == 1 {
            let sigma2 = proposal.as_ref().map_or(1.0, |p| p[(0, 0)]);
            let (a, b) = quadrature_reference(s.spec.lambda[(0, 0)], sigma2, m);
            (f(a), f(b))
        } else {
            (String::new(), String::new())
        };
        Ok(vec![
            s.label.clone(),
            d.to_string(),
            name.clone(),
            m.to_string(),
            cfg.trials.to_string(),
            cfg.pairs.to_string(),
            f(rep.mean),
            f(rep.exact),
            f(rep.variance),
            f(rep.variance_se),
            qv,
            qvar,
        ])
    })?;
    let mut t = Table::new(COLUMNS);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}
