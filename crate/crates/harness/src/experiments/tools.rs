//! `grad-check` and `whiten`.

use darkrf_core::attention::AttentionOptions;
use darkrf_core::learning::{
    estimate_lambda, grad_check, plugin_whitening, CheckpointMeta, CovarianceFactor, Objective, Params, Sequence,
};
use darkrf_core::tensor::{empirical_covariance, gaussian_sample, DenseMatrix, SeededRng};

use crate::config::List;
use crate::data::{gaussian_source, read_qkv};
use crate::lambda::LambdaSpec;
use crate::table::{f, Table};
use crate::HarnessError;

crate::settings! {
    /// `grad-check` settings.
    GradCheckConfig, GradCheckArgs, "grad-check" {
        /// Base seed
        seed: u64 = 0,
        /// Input covariance for synthetic batches
        lambda: LambdaSpec = LambdaSpec::Diagonal(vec![0.4, 0.2, 0.3, 0.5]),
        /// Dimension for isotropic and random_spd covariances
        d: usize = 4,
        /// Sequence length
        l: usize = 8,
        /// Random features (frozen across the check)
        m: usize = 16,
        /// Central-difference step
        fd_eps: f64 = 1e-5,
        /// Objectives to check
        objectives: List<Objective> = List(vec![Objective::KernelMse, Objective::AttentionMse]),
        /// Parameterizations to check: factor, projections
        params: List<String> = List(vec!["factor".into(), "projections".into()]),
        /// Optional q/k/v CSV written by gen; empty uses synthetic data
        input: String = String::new(),
    }
}

crate::settings! {
    /// `whiten` settings.
    WhitenConfig, WhitenArgs, "whiten" {
        /// Base seed
        seed: u64 = 0,
        /// Input covariance for synthetic data
        lambda: LambdaSpec = LambdaSpec::RandomSpd { seed: 5, condition: 16.0, max: 2.0 },
        /// Dimension for isotropic and random_spd covariances
        d: usize = 8,
        /// Synthetic rows per side
        n: usize = 10_000,
        /// Shrinkage toward a scaled identity
        shrinkage: f64 = 0.0,
        /// Optional q/k/v CSV written by gen; empty uses synthetic data
        input: String = String::new(),
        /// Optional path for a checkpoint of the whitening factor
        checkpoint: String = String::new(),
    }
}

fn load_or_draw(input: &str, lambda: &LambdaSpec, d: usize, l: usize, rng: SeededRng) -> Result<Sequence, HarnessError> {
    if input.is_empty() {
        let d = lambda.implied_dim().unwrap_or(d);
        Ok(gaussian_source(lambda, d, l, 1)?.draw(rng).remove(0))
    } else {
        read_qkv(&std::fs::read_to_string(input)?)
    }
}

pub fn grad_check_run(cfg: &GradCheckConfig) -> Result<Table, HarnessError> {
    let base = SeededRng::new(cfg.seed, 0);
    let seq = load_or_draw(&cfg.input, &cfg.lambda, cfg.d, cfg.l, base.split_named("data"))?;
    let d = seq.q.cols();
    let g: DenseMatrix<f64> = gaussian_sample(base.split_named("factor"), d, d);
    let m = DenseMatrix::identity(d).add(&g.scale(0.1));
    let u = gaussian_sample(base.split_named("features"), cfg.m, d);
    let batch = [seq];
    let mut t = Table::new(&["objective", "params", "d", "l", "m", "fd_eps", "max_rel_err"]);
    for obj in cfg.objectives.iter() {
        for p in cfg.params.iter() {
            let params = match p.as_str() {
                "factor" => Params::Factor { m: &m, u: &u },
                "projections" => Params::Projections { omegas: &u },
                other => return Err(HarnessError::BadConfig(format!("unknown params {other:?}"))),
            };
            let err = grad_check(*obj, params, &batch, AttentionOptions::default(), cfg.fd_eps)?;
            t.push(vec![
                obj.name().into(),
                p.clone(),
                d.to_string(),
                batch[0].q.rows().to_string(),
                cfg.m.to_string(),
                f(cfg.fd_eps),
                f(err),
            ]);
        }
    }
    Ok(t)
}

/// Whitening factor, the estimate it came from, and the covariance of the
/// whitened queries, in long form.
pub fn whiten_run(cfg: &WhitenConfig) -> Result<Table, HarnessError> {
    let base = SeededRng::new(cfg.seed, 0);
    let seq = load_or_draw(&cfg.input, &cfg.lambda, cfg.d, cfg.n, base.split_named("data"))?;
    let lambda_hat = estimate_lambda(&seq.q, &seq.k, cfg.shrinkage)?;
    let factor = plugin_whitening(&lambda_hat)?;
    let whitened = empirical_covariance(&seq.q.matmul_transposed(&factor.m));
    log::info!(
        "‖Cov(MQ) − I‖_F = {:e}",
        whitened.sub(&DenseMatrix::identity(whitened.rows())).frobenius_norm()
    );
    if !cfg.checkpoint.is_empty() {
        std::fs::write(&cfg.checkpoint, factor_checkpoint(&factor, cfg.seed))?;
    }
    let mut t = Table::new(&["matrix", "row", "col", "value"]);
    for (name, mat) in [("lambda_hat", &lambda_hat), ("m", &factor.m), ("cov_whitened", &whitened)] {
        for i in 0..mat.rows() {
            for j in 0..mat.cols() {
                t.push(vec![name.into(), i.to_string(), j.to_string(), f(mat[(i, j)])]);
            }
        }
    }
    Ok(t)
}

fn factor_checkpoint(factor: &CovarianceFactor, seed: u64) -> String {
    factor.to_checkpoint(CheckpointMeta { seed, step: 0 })
}
