//! Experiment harness: synthetic data, variance sweeps, error-vs-budget
//! curves, timing, toy training and stability sweeps. Every experiment
//! returns a [`Table`] that the CLI writes as CSV with its resolved config
//! echoed in `#` lines.

pub mod config;
pub mod data;
pub mod experiments;
pub mod lambda;
pub mod table;

pub use config::{List, Setting, Settings};
pub use lambda::LambdaSpec;
pub use table::Table;

use darkrf_core::attention::AttentionError;
use darkrf_core::features::FeatureError;
use darkrf_core::kernels::KernelError;
use darkrf_core::learning::LearningError;
use darkrf_core::sampling::SamplingError;
use darkrf_core::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("bad spec: {0}")]
    BadSpec(String),
    #[error("bad input file: {0}")]
    BadInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Runs `f` on a rayon pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, HarnessError> {
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| HarnessError::BadConfig(format!("threads={n}: {e}"))),
    }
}
