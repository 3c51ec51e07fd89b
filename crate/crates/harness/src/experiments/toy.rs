//! `toy-train`: attention matching on anisotropic Gaussian data. Trains the
//! data-aware factor (`dark`) and free projections (`lfk`), and evaluates
//! them next to the frozen Performer map and the exact reference.

use darkrf_core::attention::AttentionOptions;
use darkrf_core::learning::{
    learn_m, learn_projections_lfk, objective_and_grad, BatchSource, CovarianceFactor, Objective, Params, TrainConfig,
    TrainTrace,
};
use darkrf_core::tensor::{gaussian_sample, DenseMatrix, SeededRng};

use super::par_cells;
use crate::config::{List, Setting};
use crate::data::gaussian_source;
use crate::lambda::LambdaSpec;
use crate::table::{f, Table};
use crate::HarnessError;

impl Setting for Objective {
    fn parse_setting(s: &str) -> Result<Self, String> {
        s.trim().parse()
    }
    fn render(&self) -> String {
        self.name().into()
    }
}

crate::settings! {
    /// `toy-train` settings.
    ToyConfig, ToyArgs, "toy-train" {
        /// Base seed
        seed: u64 = 0,
        /// Independent replicates (seeds derived from the base seed)
        replicates: usize = 10,
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
        /// Gradient steps
        steps: usize = 500,
        /// Learning rate
        lr: f64 = 0.05,
        /// Training objective: kernel_mse | attention_mse
        objective: Objective = Objective::AttentionMse,
        /// Fresh feature draws every step
        resample: bool = true,
        /// Train only the diagonal of M
        diagonal: bool = false,
        /// Held-out batches for the final attention_mse
        eval_batches: usize = 32,
        /// Any of dark, lfk, performer, exact
        methods: List<String> = List(["dark", "lfk", "performer", "exact"].iter().map(|s| s.to_string()).collect()),
    }
}

pub const COLUMNS: &[&str] = &["replicate", "method", "phase", "step", "loss", "grad_norm", "diverged"];
pub const METHODS: &[&str] = &["dark", "lfk", "performer", "exact"];

/// Everything a single training run needs besides the method and lr.
#[derive(Debug, Clone)]
pub struct ToySetup {
    pub source: BatchSource,
    pub m: usize,
    pub steps: usize,
    pub objective: Objective,
    pub resample: bool,
    pub diagonal: bool,
    pub eval_batches: usize,
}

/// Training trace (empty for untrained methods) and held-out attention_mse.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyRun {
    pub traces: Vec<TrainTrace>,
    pub eval_loss: f64,
}

impl ToySetup {
    pub fn from_config(cfg: &ToyConfig) -> Result<Self, HarnessError> {
        let d = cfg.lambda.implied_dim().unwrap_or(cfg.d);
        Ok(Self {
            source: gaussian_source(&cfg.lambda, d, cfg.l, cfg.batch)?,
            m: cfg.m,
            steps: cfg.steps,
            objective: cfg.objective,
            resample: cfg.resample,
            diagonal: cfg.diagonal,
            eval_batches: cfg.eval_batches,
        })
    }

    fn train_config(&self, lr: f64) -> TrainConfig {
        TrainConfig {
            objective: self.objective,
            steps: self.steps,
            lr,
            m: self.m,
            resample: self.resample,
            diagonal: self.diagonal,
            attention: AttentionOptions::default(),
        }
    }

    /// Mean attention_mse over held-out batches; every method sees the same
    /// batches and, where it draws features, the same draws.
    fn eval(&self, rng: SeededRng, params: &Trained) -> Result<f64, HarnessError> {
        let d = self.source.dim();
        let opts = AttentionOptions::default();
        let mut total = 0.0;
        for b in 0..self.eval_batches {
            let batch = self.source.draw(rng.split_named("eval").split(b as u64));
            let u = || gaussian_sample(rng.split_named("eval_features").split(b as u64), self.m, d);
            total += match params {
                Trained::Factor(m) => objective_and_grad(Objective::AttentionMse, Params::Factor { m, u: &u() }, &batch, opts, false)?.0,
                Trained::Projections(omegas) => {
                    objective_and_grad(Objective::AttentionMse, Params::Projections { omegas }, &batch, opts, false)?.0
                }
                // the reference is its own target
                Trained::Exact => 0.0,
            };
        }
        Ok(total / self.eval_batches as f64)
    }

    /// Trains (if applicable) and evaluates one method on replicate stream `rng`.
    pub fn run_method(&self, method: &str, lr: f64, rng: SeededRng) -> Result<ToyRun, HarnessError> {
        let d = self.source.dim();
        let train_rng = rng.split_named("train");
        let (traces, params) = match method {
            "dark" => {
                let (fac, tr) = learn_m(&self.source, &self.train_config(lr), train_rng, CovarianceFactor::identity(d))?;
                (tr, Trained::Factor(fac.m))
            }
            "lfk" => {
                let init = gaussian_sample(rng.split_named("lfk_init"), self.m, d);
                let (omegas, tr) = learn_projections_lfk(&self.source, &self.train_config(lr), train_rng, init)?;
                (tr, Trained::Projections(omegas))
            }
            "performer" => (Vec::new(), Trained::Factor(DenseMatrix::identity(d))),
            "exact" => (Vec::new(), Trained::Exact),
            other => return Err(HarnessError::BadConfig(format!("unknown method {other:?}"))),
        };
        let eval_loss = self.eval(rng, &params)?;
        Ok(ToyRun { traces, eval_loss })
    }
}

enum Trained {
    Factor(DenseMatrix<f64>),
    Projections(DenseMatrix<f64>),
    Exact,
}

/// Stream of replicate `r`, shared by every method.
pub fn replicate_stream(seed: u64, r: usize) -> SeededRng {
    SeededRng::new(seed, 0).split_named("replicate").split(r as u64)
}

pub fn run(cfg: &ToyConfig) -> Result<Table, HarnessError> {
    let setup = ToySetup::from_config(cfg)?;
    let cells: Vec<(usize, &String)> = (0..cfg.replicates).flat_map(|r| cfg.methods.iter().map(move |m| (r, m))).collect();
    let runs = par_cells(&cells, |&(r, method)| setup.run_method(method, cfg.lr, replicate_stream(cfg.seed, r)))?;
    let mut t = Table::new(COLUMNS);
    for (&(r, method), run) in cells.iter().zip(&runs) {
        for tr in &run.traces {
            t.push(vec![
                r.to_string(),
                method.clone(),
                "train".into(),
                tr.step.to_string(),
                f(tr.loss),
                f(tr.grad_norm),
                tr.diverged.to_string(),
            ]);
        }
        t.push(vec![
            r.to_string(),
            method.clone(),
            "eval".into(),
            run.traces.len().to_string(),
            f(run.eval_loss),
            String::new(),
            run.traces.last().is_some_and(|x| x.diverged).to_string(),
        ]);
    }
    Ok(t)
}
