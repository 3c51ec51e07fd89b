//! `error-vs-budget`: relative RMSE of random-feature attention against
//! exact softmax attention as the feature count grows.

use darkrf_core::attention::{default_scale, exact_attention, rf_attention, AttentionOptions, MapConfig};
use darkrf_core::learning::{
    estimate_lambda, learn_m, plugin_whitening, BatchSource, CovarianceFactor, Sequence, TrainConfig,
};
use darkrf_core::sampling::{optimal_sigma_star, GaussianInputSpec};
use darkrf_core::tensor::{relative_frobenius, DenseMatrix, SeededRng};

use super::par_cells;
use crate::config::List;
use crate::data::gaussian_source;
use crate::lambda::LambdaSpec;
use crate::table::{f, Table};
use crate::HarnessError;

crate::settings! {
    /// `error-vs-budget` settings.
    BudgetConfig, BudgetArgs, "error-vs-budget" {
        /// Base seed
        seed: u64 = 0,
        /// Input covariance
        lambda: LambdaSpec = LambdaSpec::RandomSpd { seed: 3, condition: 16.0, max: 0.45 },
        /// Input dimension
        d: usize = 4,
        /// Sequence length
        l: usize = 64,
        /// Feature counts
        ms: List<usize> = List(vec![8, 16, 32, 64, 128, 256, 512, 1024]),
        /// Data replicates per feature count
        reps: usize = 20,
        /// Any of performer, performer_orf, dark_plugin, dark_learned, trig, importance
        estimators: List<String> = List(
            ["performer", "performer_orf", "dark_plugin", "dark_learned", "trig", "importance"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        ),
        /// Rows per side used to estimate Λ
        plugin_samples: usize = 1000,
        /// Shrinkage of the Λ estimate toward a scaled identity
        shrinkage: f64 = 0.0,
        /// Gradient steps for dark_learned
        train_steps: usize = 200,
        /// Learning rate for dark_learned
        train_lr: f64 = 0.05,
        /// Features per training step for dark_learned
        train_m: usize = 64,
    }
}

pub const COLUMNS: &[&str] = &["lambda", "d", "l", "estimator", "m", "reps", "rmse", "rmse_se"];

/// Every estimator name the experiment knows.
pub const ESTIMATORS: &[&str] = &["performer", "performer_orf", "dark_plugin", "dark_learned", "trig", "importance"];

fn lambda_hat(cfg: &BudgetConfig, spec: &GaussianInputSpec, base: SeededRng) -> Result<DenseMatrix<f64>, HarnessError> {
    let r = base.split_named("plugin");
    let xq = spec.sample(r.split_named("q"), cfg.plugin_samples);
    let xk = spec.sample(r.split_named("k"), cfg.plugin_samples);
    Ok(estimate_lambda(&xq, &xk, cfg.shrinkage)?)
}

fn map_for(name: &str, cfg: &BudgetConfig, spec: &GaussianInputSpec, base: SeededRng) -> Result<MapConfig<f64>, HarnessError> {
    Ok(match name {
        "performer" => MapConfig::Performer { orthogonal: false },
        "performer_orf" => MapConfig::Performer { orthogonal: true },
        "trig" => MapConfig::Trig,
        "dark_plugin" => MapConfig::DataAware {
            factor: plugin_whitening(&lambda_hat(cfg, spec, base)?)?.m,
        },
        "dark_learned" => {
            let d = spec.dim();
            let train = TrainConfig {
                steps: cfg.train_steps,
                lr: cfg.train_lr,
                m: cfg.train_m,
                ..TrainConfig::default()
            };
            let source = BatchSource::Gaussian {
                spec: spec.clone(),
                seq_len: cfg.l,
                batch: 1,
                value_dim: d,
            };
            let (fac, traces) = learn_m(&source, &train, base.split_named("train"), CovarianceFactor::identity(d))?;
            if traces.last().is_some_and(|t| t.diverged) {
                log::warn!("dark_learned training diverged at step {}", traces.len() - 1);
            }
            MapConfig::DataAware { factor: fac.m }
        }
        "importance" => {
            let scaled = lambda_hat(cfg, spec, base)?.scale(default_scale::<f64>(spec.dim()));
            MapConfig::ImportanceWeighted {
                proposal: optimal_sigma_star(&GaussianInputSpec::new(scaled)?)?,
            }
        }
        other => return Err(HarnessError::BadConfig(format!("unknown estimator {other:?}"))),
    })
}

/// Relative RMSE over replicates and its standard error (delta method on
/// the mean squared relative error).
pub fn rmse_with_se(errors: &[f64]) -> (f64, f64) {
    let n = errors.len() as f64;
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let mse = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let rmse = mse.sqrt();
    (rmse, (var / n).sqrt() / (2.0 * rmse))
}

pub fn run(cfg: &BudgetConfig) -> Result<Table, HarnessError> {
    if cfg.reps < 2 {
        return Err(HarnessError::BadConfig("reps must be at least 2".into()));
    }
    let d = cfg.lambda.implied_dim().unwrap_or(cfg.d);
    let spec = cfg.lambda.input_spec(d)?;
    let base = SeededRng::new(cfg.seed, 0);
    let source = gaussian_source(&cfg.lambda, d, cfg.l, 1)?;
    let scale = default_scale::<f64>(d);
    let data: Vec<(Sequence, DenseMatrix<f64>)> = (0..cfg.reps)
        .map(|r| {
            let s = source.draw(base.split_named("data").split(r as u64)).remove(0);
            let e = exact_attention(&s.q, &s.k, &s.v, scale)?.values;
            Ok((s, e))
        })
        .collect::<Result<_, HarnessError>>()?;
    let maps = par_cells(&cfg.estimators, |name| map_for(name, cfg, &spec, base))?;
    let cells: Vec<(usize, usize)> = (0..maps.len()).flat_map(|e| cfg.ms.iter().map(move |&m| (e, m))).collect();
    let rows = par_cells(&cells, |&(e, m)| {
        let errors = data
            .iter()
            .enumerate()
            .map(|(r, (s, exact))| {
                let rng = base.split_named("features").split(r as u64).split(m as u64);
                let out = rf_attention(&s.q, &s.k, &s.v, &maps[e], m, rng, AttentionOptions::default())?;
                Ok(relative_frobenius(&out.values, exact))
            })
            .collect::<Result<Vec<f64>, HarnessError>>()?;
        let (rmse, se) = rmse_with_se(&errors);
        Ok(vec![
            cfg.lambda.to_string(),
            d.to_string(),
            cfg.l.to_string(),
            cfg.estimators[e].clone(),
            m.to_string(),
            cfg.reps.to_string(),
            f(rmse),
            f(se),
        ])
    })?;
    let mut t = Table::new(COLUMNS);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}
