//! One module per CLI subcommand. Each `run` returns a [`crate::Table`];
//! grid cells run in parallel on derived streams and rows come back in grid
//! order, so output does not depend on the thread count.

pub mod budget;
pub mod stability;
pub mod timing;
pub mod tools;
pub mod toy;
pub mod variance;

use rayon::prelude::*;

use crate::HarnessError;

/// Evaluates `f` over `cells` in parallel, keeping input order.
pub(crate) fn par_cells<C, R, F>(cells: &[C], f: F) -> Result<Vec<R>, HarnessError>
where
    C: Sync,
    R: Send,
    F: Fn(&C) -> Result<R, HarnessError> + Sync + Send,
{
    cells.par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
