//! `stability`: toy training over a log-spaced learning-rate grid, counting
//! loss spikes and divergences per run.

use darkrf_core::learning::Objective;

use super::par_cells;
use super::toy::{replicate_stream, ToyConfig, ToySetup};
use crate::config::List;
use crate::lambda::LambdaSpec;
use crate::table::{f, Table};
use crate::HarnessError;

crate::settings! {
    /// `stability` settings.
    StabilityConfig, StabilityArgs, "stability" {
        /// Base seed
        seed: u64 = 0,
        /// Independent replicates
        replicates: usize = 5,
        /// Input covariance
        lambda: LambdaSpec = LambdaSpec::Diagonal(vec![2.0, 0.5, 1.0, 1.0]),
        /// Dimension for isotropic and random_spd covariances
        d: usize = 4,
        /// Sequence length
        l: usize = 16,
        /// Sequences per step
        batch: usize = 1,
        /// Random features
        m: usize = 64,
        /// Gradient steps per run
        steps: usize = 500,
        /// Training objective: kernel_mse | attention_mse
        objective: Objective = Objective::AttentionMse,
        /// Smallest learning rate of the grid
        lr_min: f64 = 0.05,
        /// Ratio of the largest to the smallest learning rate
        lr_span: f64 = 10.0,
        /// Number of log-spaced learning rates
        lr_count: usize = 7,
        /// Any of dark, lfk
        methods: List<String> = List(vec!["dark".into(), "lfk".into()]),
        /// Rolling window (steps) for the spike median
        window: usize = 50,
        /// Loss above this multiple of the rolling median counts as a spike
        spike_factor: f64 = 3.0,
        /// Held-out batches for the final attention_mse
        eval_batches: usize = 8,
    }
}

pub const COLUMNS: &[&str] = &["replicate", "method", "lr", "steps_run", "spikes", "divergences", "final_loss"];

impl StabilityConfig {
    pub fn lr_grid(&self) -> Vec<f64> {
        let n = self.lr_count;
        (0..n)
            .map(|i| {
                let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                self.lr_min * self.lr_span.powf(t)
            })
            .collect()
    }

    fn toy(&self) -> ToyConfig {
        ToyConfig {
            seed: self.seed,
            replicates: self.replicates,
            lambda: self.lambda.clone(),
            d: self.d,
            l: self.l,
            batch: self.batch,
            m: self.m,
            steps: self.steps,
            objective: self.objective,
            eval_batches: self.eval_batches,
            ..ToyConfig::default()
        }
    }
}

/// Steps whose loss exceeds `factor` times the median of the previous
/// `window` losses. Steps without a full window, and non-finite losses, are
/// not counted.
pub fn count_spikes(losses: &[f64], window: usize, factor: f64) -> usize {
    if window == 0 {
        return 0;
    }
    (window..losses.len())
        .filter(|&s| {
            let mut prev: Vec<f64> = losses[s - window..s].to_vec();
            prev.sort_by(|a, b| a.total_cmp(b));
            let med = if window % 2 == 1 {
                prev[window / 2]
            } else {
                0.5 * (prev[window / 2 - 1] + prev[window / 2])
            };
            losses[s].is_finite() && losses[s] > factor * med
        })
        .count()
}

pub fn run(cfg: &StabilityConfig) -> Result<Table, HarnessError> {
    for m in cfg.methods.iter() {
        if m != "dark" && m != "lfk" {
            return Err(HarnessError::BadConfig(format!("stability trains dark or lfk, not {m:?}")));
        }
    }
    let setup = ToySetup::from_config(&cfg.toy())?;
    let grid = cfg.lr_grid();
    let mut cells = Vec::new();
    for r in 0..cfg.replicates {
        for method in cfg.methods.iter() {
            for &lr in &grid {
                cells.push((r, method, lr));
            }
        }
    }
    let rows = par_cells(&cells, |&(r, method, lr)| {
        let run = setup.run_method(method, lr, replicate_stream(cfg.seed, r))?;
        let losses: Vec<f64> = run.traces.iter().map(|t| t.loss).collect();
        Ok(vec![
            r.to_string(),
            method.clone(),
            f(lr),
            run.traces.len().to_string(),
            count_spikes(&losses, cfg.window, cfg.spike_factor).to_string(),
            run.traces.iter().filter(|t| t.diverged).count().to_string(),
            f(run.eval_loss),
        ])
    })?;
    let mut t = Table::new(COLUMNS);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}
