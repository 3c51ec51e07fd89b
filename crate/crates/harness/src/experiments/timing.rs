//! `timing`: wall-clock cost of exact and random-feature attention against
//! sequence length, with fitted log-log slopes. Runs on the calling thread
//! only; pinning the process to a core is left to the user.

use std::time::Instant;

use darkrf_core::attention::{default_scale, exact_attention, rf_attention, AttentionOptions, MapConfig};
use darkrf_core::tensor::SeededRng;

use super::loglog_slope;
use crate::config::List;
use crate::data::gaussian_source;
use crate::lambda::LambdaSpec;
use crate::table::{f, Table};
use crate::HarnessError;

crate::settings! {
    /// `timing` settings.
    TimingConfig, TimingArgs, "timing" {
        /// Base seed
        seed: u64 = 0,
        /// Sequence lengths
        ls: List<usize> = List(vec![256, 512, 1024, 2048, 4096, 8192]),
        /// Random features for the rf path
        m: usize = 64,
        /// Input dimension
        d: usize = 32,
        /// Timed repetitions per point (the median is reported)
        reps: usize = 20,
        /// Untimed repetitions before measuring
        warmup: usize = 3,
        /// Any of rf, exact
        methods: List<String> = List(vec!["rf".into(), "exact".into()]),
    }
}

pub const COLUMNS: &[&str] = &["kind", "method", "l", "m", "d", "reps", "runtime_ns", "slope"];
pub const NONDETERMINISTIC: &[&str] = &["runtime_ns", "slope"];

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

pub fn run(cfg: &TimingConfig) -> Result<Table, HarnessError> {
    if cfg.reps == 0 || cfg.ls.len() < 2 {
        return Err(HarnessError::BadConfig("need reps ≥ 1 and at least two lengths".into()));
    }
    for m in cfg.methods.iter() {
        if m != "rf" && m != "exact" {
            return Err(HarnessError::BadConfig(format!("unknown method {m:?}")));
        }
    }
    let base = SeededRng::new(cfg.seed, 0);
    let scale = default_scale::<f64>(cfg.d);
    let map = MapConfig::Performer { orthogonal: false };
    let mut t = Table::new(COLUMNS).with_nondeterministic(NONDETERMINISTIC);
    for method in cfg.methods.iter() {
        let mut medians = Vec::with_capacity(cfg.ls.len());
        for &l in cfg.ls.iter() {
            let s = gaussian_source(&LambdaSpec::Isotropic(1.0), cfg.d, l, 1)?
                .draw(base.split_named("data").split(l as u64))
                .remove(0);
            let rng = base.split_named("features").split(l as u64);
            let call = || -> Result<f64, HarnessError> {
                let out = match method.as_str() {
                    "rf" => rf_attention(&s.q, &s.k, &s.v, &map, cfg.m, rng, AttentionOptions::default())?,
                    _ => exact_attention(&s.q, &s.k, &s.v, scale)?,
                };
                Ok(out.values[(0, 0)])
            };
            for _ in 0..cfg.warmup {
                std::hint::black_box(call()?);
            }
            let mut times = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                let start = Instant::now();
                std::hint::black_box(call()?);
                times.push(start.elapsed().as_nanos() as f64);
            }
            let med = median(times);
            log::info!("{method} L={l}: {med:.0} ns");
            medians.push(med);
            t.push(vec![
                "point".into(),
                method.clone(),
                l.to_string(),
                cfg.m.to_string(),
                cfg.d.to_string(),
                cfg.reps.to_string(),
                f(med),
                String::new(),
            ]);
        }
        let ls: Vec<f64> = cfg.ls.iter().map(|&l| l as f64).collect();
        t.push(vec![
            "slope".into(),
            method.clone(),
            String::new(),
            cfg.m.to_string(),
            cfg.d.to_string(),
            cfg.reps.to_string(),
            String::new(),
            f(loglog_slope(&ls, &medians)),
        ]);
    }
    Ok(t)
}
