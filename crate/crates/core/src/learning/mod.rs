//! Data-driven choice of `Σ = MᵀM`: plug-in whitening from estimated input
//! covariance, and gradient descent on `M` (or on the projections directly)
//! through the reparameterization `ω = Mᵀu`.

mod factor;
mod objective;
mod train;

pub use factor::{estimate_lambda, plugin_whitening, CheckpointMeta, CovarianceFactor, WHITENING_RATIO};
pub use objective::{
    grad_check, grad_check_fn, objective_and_grad, quadratic_objective, BatchSource, Objective, Params,
    Sequence,
};
pub use train::{
    data_stream, feature_stream, learn_m, learn_projections_lfk, TrainConfig, TrainTrace, DIVERGENCE_FACTOR,
};

pub(crate) use crate::sampling::GaussianInputSpec;

use thiserror::Error;

use crate::attention::AttentionError;
use crate::features::FeatureError;
use crate::kernels::KernelError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need at least 2 samples to estimate a covariance, got {rows}")]
    InsufficientData { rows: usize },
    #[error("covariance is near singular (eigenvalues in [{min:e}, {max:e}]); increase shrinkage")]
    NearSingular { min: f64, max: f64 },
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{rf_attention, AttentionOptions, MapConfig};
    use crate::tensor::{gaussian_sample, relative_frobenius, DenseMatrix, SeededRng};

    fn small_batch(seed: u64, l: usize, d: usize) -> Vec<Sequence> {
        let spec = GaussianInputSpec::diagonal(&vec![0.3; d]).unwrap();
        BatchSource::Gaussian {
            spec,
            seq_len: l,
            batch: 2,
            value_dim: 3,
        }
        .draw(SeededRng::new(seed, 0))
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = gaussian_sample::<f64>(SeededRng::new(1, 0), 3, 4).scale(1e-3);
        let mut f = CovarianceFactor::new(m).unwrap();
        f.m[(0, 0)] = 1e-300;
        f.m[(1, 1)] = 0.1 + 0.2;
        let text = f.to_checkpoint(CheckpointMeta { seed: 9, step: 17 });
        let (back, meta) = CovarianceFactor::from_checkpoint(&text).unwrap();
        assert_eq!(back.m.as_slice(), f.m.as_slice());
        assert_eq!(meta, CheckpointMeta { seed: 9, step: 17 });
    }

    #[test]
    fn estimate_lambda_examples() {
        // ±√2 along each axis: zero mean, covariance 4/3 on the diagonal (n−1 = 3)
        let c = 2f64.sqrt();
        let x = DenseMatrix::from_rows(&[[c, 0.0], [-c, 0.0], [0.0, c], [0.0, -c]]);
        let l = estimate_lambda(&x, &x, 0.0).unwrap();
        assert!((l[(0, 0)] - 4.0 / 3.0).abs() < 1e-15 && l[(0, 1)] == 0.0);
        let y = gaussian_sample::<f64>(SeededRng::new(2, 0), 50, 3);
        let full = estimate_lambda(&y, &y, 1.0).unwrap();
        let t = estimate_lambda(&y, &y, 0.0).unwrap().trace() / 3.0;
        assert_eq!(full, DenseMatrix::identity(3).scale(t));
        assert!(matches!(
            estimate_lambda(&DenseMatrix::zeros(1, 2), &DenseMatrix::zeros(1, 2), 0.0),
            Err(LearningError::InsufficientData { rows: 1 })
        ));
    }

    #[test]
    fn whitening_examples() {
        assert_eq!(plugin_whitening(&DenseMatrix::identity(3)).unwrap().m, DenseMatrix::identity(3));
        let f = plugin_whitening(&DenseMatrix::from_diag(&[4.0, 1.0])).unwrap();
        assert_eq!(f.m, DenseMatrix::from_diag(&[0.5, 1.0]));
        assert_eq!(f.sigma(), DenseMatrix::from_diag(&[0.25, 1.0]));
        assert!(matches!(
            plugin_whitening(&DenseMatrix::from_diag(&[1.0, 1e-12])),
            Err(LearningError::NearSingular { .. })
        ));
    }

    #[test]
    fn quadratic_grad_check() {
        let a = gaussian_sample::<f64>(SeededRng::new(3, 0), 3, 3);
        let x = gaussian_sample::<f64>(SeededRng::new(3, 1), 3, 3);
        assert!(grad_check_fn(&x, |m| quadratic_objective(m, &a), 1e-4) < 1e-9);
    }

    #[test]
    fn kernel_mse_grad_check_factor() {
        let batch = small_batch(4, 6, 3);
        let m = DenseMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.1 });
        let u = gaussian_sample(SeededRng::new(4, 1), 8, 3);
        let worst = grad_check(Objective::KernelMse, Params::Factor { m: &m, u: &u }, &batch, AttentionOptions::default(), 1e-5)
            .unwrap();
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn kernel_mse_grad_check_projections() {
        let batch = small_batch(5, 6, 3);
        let w = gaussian_sample(SeededRng::new(5, 1), 8, 3);
        let worst = grad_check(Objective::KernelMse, Params::Projections { omegas: &w }, &batch, AttentionOptions::default(), 1e-5)
            .unwrap();
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn attention_mse_grad_check() {
        let batch = small_batch(6, 8, 4);
        let m = DenseMatrix::from_fn(4, 4, |i, j| if i == j { 1.1 } else { 0.05 * (i as f64 - j as f64) });
        let u = gaussian_sample(SeededRng::new(6, 1), 16, 4);
        let opts = AttentionOptions::default();
        let worst = grad_check(Objective::AttentionMse, Params::Factor { m: &m, u: &u }, &batch, opts, 1e-5).unwrap();
        assert!(worst < 1e-4, "factor {worst}");
        let worst = grad_check(Objective::AttentionMse, Params::Projections { omegas: &u }, &batch, opts, 1e-5).unwrap();
        assert!(worst < 1e-4, "projections {worst}");
    }

    #[test]
    fn zero_lr_reproduces_performer_losses() {
        let spec = GaussianInputSpec::diagonal(&[1.0, 0.5, 0.8]).unwrap();
        let source = BatchSource::Gaussian {
            spec,
            seq_len: 10,
            batch: 1,
            value_dim: 2,
        };
        let cfg = TrainConfig {
            steps: 4,
            lr: 0.0,
            m: 16,
            ..TrainConfig::default()
        };
        let rng = SeededRng::new(7, 0);
        let (f, traces) = learn_m(&source, &cfg, rng, CovarianceFactor::identity(3)).unwrap();
        assert_eq!(f.m, DenseMatrix::identity(3));
        for t in &traces {
            let seq = &source.draw(data_stream(rng, t.step))[0];
            let opts = AttentionOptions::default();
            let rf = rf_attention(&seq.q, &seq.k, &seq.v, &MapConfig::Performer { orthogonal: false }, 16, feature_stream(rng, t.step, true), opts)
                .unwrap();
            let ex = crate::attention::exact_attention(&seq.q, &seq.k, &seq.v, 1.0 / 3f64.sqrt()).unwrap();
            let d = rf.values.sub(&ex.values);
            let loss = crate::scalar::dot(d.as_slice(), d.as_slice()) / 20.0;
            assert_eq!(loss, t.loss);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let spec = GaussianInputSpec::diagonal(&[2.0, 0.5]).unwrap();
        let source = BatchSource::Gaussian {
            spec,
            seq_len: 8,
            batch: 2,
            value_dim: 2,
        };
        let cfg = TrainConfig {
            steps: 5,
            m: 8,
            ..TrainConfig::default()
        };
        let a = learn_m(&source, &cfg, SeededRng::new(8, 0), CovarianceFactor::identity(2)).unwrap();
        let b = learn_m(&source, &cfg, SeededRng::new(8, 0), CovarianceFactor::identity(2)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn divergence_stops_training() {
        let spec = GaussianInputSpec::diagonal(&[1.0, 1.0]).unwrap();
        let source = BatchSource::Gaussian {
            spec,
            seq_len: 8,
            batch: 1,
            value_dim: 2,
        };
        let cfg = TrainConfig {
            objective: Objective::KernelMse,
            steps: 200,
            lr: 1e4,
            m: 8,
            ..TrainConfig::default()
        };
        let (_, traces) = learn_m(&source, &cfg, SeededRng::new(9, 0), CovarianceFactor::identity(2)).unwrap();
        let last = traces.last().unwrap();
        assert!(last.diverged);
        assert!(traces[..traces.len() - 1].iter().all(|t| !t.diverged));
    }

    #[test]
    fn lfk_zero_lr_keeps_projections() {
        let spec = GaussianInputSpec::diagonal(&[1.0, 1.0]).unwrap();
        let source = BatchSource::Gaussian {
            spec,
            seq_len: 4,
            batch: 1,
            value_dim: 2,
        };
        let w = gaussian_sample(SeededRng::new(10, 0), 8, 2);
        let cfg = TrainConfig {
            steps: 3,
            lr: 0.0,
            m: 8,
            ..TrainConfig::default()
        };
        let (out, _) = learn_projections_lfk(&source, &cfg, SeededRng::new(10, 1), w.clone()).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn diagonal_training_keeps_factor_diagonal() {
        let spec = GaussianInputSpec::diagonal(&[2.0, 0.5]).unwrap();
        let source = BatchSource::Gaussian {
            spec,
            seq_len: 8,
            batch: 1,
            value_dim: 2,
        };
        let cfg = TrainConfig {
            steps: 5,
            m: 8,
            diagonal: true,
            ..TrainConfig::default()
        };
        let (f, _) = learn_m(&source, &cfg, SeededRng::new(11, 0), CovarianceFactor::identity(2)).unwrap();
        assert_eq!(f.m[(0, 1)], 0.0);
        assert_eq!(f.m[(1, 0)], 0.0);
        assert!(relative_frobenius(&f.m, &DenseMatrix::identity(2)) > 0.0);
    }
}
