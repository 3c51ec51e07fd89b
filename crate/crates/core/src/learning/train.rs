use crate::attention::AttentionOptions;
use crate::tensor::{gaussian_sample, DenseMatrix, SeededRng};

use super::objective::{objective_and_grad, BatchSource, Objective, Params};
use super::{CovarianceFactor, LearningError};

/// Loss above this multiple of the first loss counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub objective: Objective,
    pub steps: usize,
    pub lr: f64,
    /// Random features per map.
    pub m: usize,
    /// Fresh `u` (or nothing, for learned projections) every step; otherwise
    /// one draw for the whole run.
    pub resample: bool,
    /// Keep only the diagonal of `M` trainable.
    pub diagonal: bool,
    pub attention: AttentionOptions<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::AttentionMse,
            steps: 500,
            lr: 0.05,
            m: 64,
            resample: true,
            diagonal: false,
            attention: AttentionOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub step: usize,
    /// Loss at the parameters before this step's update.
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub seed: u64,
    pub diverged: bool,
}

/// Streams used by the training loops; exposed so callers can replay a step.
pub fn data_stream(rng: SeededRng, step: usize) -> SeededRng {
    rng.split_named("data").split(step as u64)
}

pub fn feature_stream(rng: SeededRng, step: usize, resample: bool) -> SeededRng {
    let f = rng.split_named("features");
    if resample {
        f.split(step as u64)
    } else {
        f
    }
}

fn run<F>(
    source: &BatchSource,
    cfg: &TrainConfig,
    rng: SeededRng,
    mut theta: DenseMatrix<f64>,
    mut step_fn: F,
) -> (DenseMatrix<f64>, Vec<TrainTrace>)
where
    F: FnMut(&DenseMatrix<f64>, &[crate::learning::Sequence], usize) -> Result<(f64, DenseMatrix<f64>), LearningError>,
{
    let mut traces = Vec::with_capacity(cfg.steps);
    let mut initial = None;
    for step in 0..cfg.steps {
        let batch = source.draw(data_stream(rng, step));
        let (loss, grad) = match step_fn(&theta, &batch, step) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("step {step}: {e}");
                (f64::NAN, DenseMatrix::zeros(theta.rows(), theta.cols()))
            }
        };
        let first = *initial.get_or_insert(loss);
        let grad_norm = grad.frobenius_norm();
        let diverged = !loss.is_finite() || !grad_norm.is_finite() || loss > DIVERGENCE_FACTOR * first;
        traces.push(TrainTrace {
            step,
            loss,
            grad_norm,
            lr: cfg.lr,
            seed: rng.seed,
            diverged,
        });
        if diverged {
            log::info!("diverged at step {step} (loss {loss:e})");
            break;
        }
        theta = theta.sub(&grad.scale(cfg.lr));
    }
    (theta, traces)
}

/// Plain gradient descent on the factor `M` of a data-aware map.
///
/// Training stops at the first divergent step, which is the last trace.
pub fn learn_m(
    source: &BatchSource,
    cfg: &TrainConfig,
    rng: SeededRng,
    init: CovarianceFactor,
) -> Result<(CovarianceFactor, Vec<TrainTrace>), LearningError> {
    if init.dim() != source.dim() {
        return Err(LearningError::Dimension(format!("factor {:?} for d={}", init.m.shape(), source.dim())));
    }
    check_config(cfg)?;
    let r = init.rank();
    let frozen = (!cfg.resample).then(|| gaussian_sample::<f64>(feature_stream(rng, 0, false), cfg.m, r));
    let (m, traces) = run(source, cfg, rng, init.m, |m, batch, step| {
        let fresh;
        let u = match &frozen {
            Some(u) => u,
            None => {
                fresh = gaussian_sample(feature_stream(rng, step, true), cfg.m, r);
                &fresh
            }
        };
        let (loss, mut grad) = objective_and_grad(cfg.objective, Params::Factor { m, u }, batch, cfg.attention, true)?;
        if cfg.diagonal {
            for i in 0..grad.rows() {
                for j in 0..grad.cols() {
                    if i != j {
                        grad[(i, j)] = 0.0;
                    }
                }
            }
        }
        Ok((loss, grad))
    });
    Ok((CovarianceFactor { m }, traces))
}

/// Plain gradient descent on the projection rows themselves (learned feature
/// kernel baseline). The rows are the parameters, so `resample` has no effect.
pub fn learn_projections_lfk(
    source: &BatchSource,
    cfg: &TrainConfig,
    rng: SeededRng,
    init: DenseMatrix<f64>,
) -> Result<(DenseMatrix<f64>, Vec<TrainTrace>), LearningError> {
    if init.cols() != source.dim() {
        return Err(LearningError::Dimension(format!("projections {:?} for d={}", init.shape(), source.dim())));
    }
    check_config(cfg)?;
    Ok(run(source, cfg, rng, init, |omegas, batch, _| {
        objective_and_grad(cfg.objective, Params::Projections { omegas }, batch, cfg.attention, true)
    }))
}

fn check_config(cfg: &TrainConfig) -> Result<(), LearningError> {
    if cfg.m == 0 || !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(LearningError::Dimension(format!("m={}, lr={}", cfg.m, cfg.lr)));
    }
    Ok(())
}
