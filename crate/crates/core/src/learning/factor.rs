use std::fmt::Write as _;

use crate::tensor::{empirical_covariance, sym_eig, DenseMatrix};

use super::LearningError;

/// Factor `M` (`r×d`) of `Σ = MᵀM`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactor {
    pub m: DenseMatrix<f64>,
}

/// Provenance stored alongside a checkpointed factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: usize,
}

impl CovarianceFactor {
    pub fn new(m: DenseMatrix<f64>) -> Result<Self, LearningError> {
        if !m.is_finite() {
            return Err(LearningError::NonFinite("factor".into()));
        }
        Ok(Self { m })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            m: DenseMatrix::identity(d),
        }
    }

    /// `[I_r 0]`, the rank-`r` analogue of the identity start.
    pub fn truncated_identity(r: usize, d: usize) -> Self {
        Self {
            m: DenseMatrix::from_fn(r, d, |i, j| if i == j { 1.0 } else { 0.0 }),
        }
    }

    pub fn rank(&self) -> usize {
        self.m.rows()
    }

    pub fn dim(&self) -> usize {
        self.m.cols()
    }

    pub fn sigma(&self) -> DenseMatrix<f64> {
        self.m.transpose_matmul(&self.m).symmetrized()
    }

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# darkrf covariance factor");
        let _ = writeln!(s, "rows={}", self.m.rows());
        let _ = writeln!(s, "cols={}", self.m.cols());
        let _ = writeln!(s, "seed={}", meta.seed);
        let _ = writeln!(s, "step={}", meta.step);
        for r in self.m.row_iter() {
            let line: Vec<String> = r.iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<(Self, CheckpointMeta), LearningError> {
        let bad = |msg: String| LearningError::Checkpoint(msg);
        let mut header = std::collections::HashMap::new();
        let mut data = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            if let Some((k, v)) = line.split_once('=') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            } else {
                for cell in line.split(',') {
                    data.push(cell.trim().parse::<f64>().map_err(|e| bad(format!("{cell:?}: {e}")))?);
                }
            }
        }
        let field = |k: &str| -> Result<u64, LearningError> {
            header
                .get(k)
                .ok_or_else(|| bad(format!("missing {k}")))?
                .parse()
                .map_err(|e| bad(format!("{k}: {e}")))
        };
        let (rows, cols) = (field("rows")? as usize, field("cols")? as usize);
        let meta = CheckpointMeta {
            seed: field("seed")?,
            step: field("step")? as usize,
        };
        let m = DenseMatrix::from_vec(rows, cols, data).map_err(|e| bad(e.to_string()))?;
        Ok((Self { m }, meta))
    }
}

/// Pooled covariance of queries and keys with shrinkage toward
/// `(trace/d)·I`: `Λ̂ = (1−δ)·C + δ·(tr C/d)·I`.
///
/// `C` averages the two sample covariances, each centered on its own mean.
pub fn estimate_lambda(
    xq: &DenseMatrix<f64>,
    xk: &DenseMatrix<f64>,
    shrinkage: f64,
) -> Result<DenseMatrix<f64>, LearningError> {
    if xq.rows() < 2 || xk.rows() < 2 {
        return Err(LearningError::InsufficientData {
            rows: xq.rows().min(xk.rows()),
        });
    }
    if xq.cols() != xk.cols() {
        return Err(LearningError::Dimension(format!("{} vs {}", xq.cols(), xk.cols())));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(LearningError::Dimension(format!("shrinkage {shrinkage} outside [0, 1]")));
    }
    let d = xq.cols();
    let c = empirical_covariance(xq).add(&empirical_covariance(xk)).scale(0.5).symmetrized();
    let target = shrinkage * c.trace() / d as f64;
    Ok(DenseMatrix::from_fn(d, d, |i, j| {
        let off = (1.0 - shrinkage) * c[(i, j)];
        if i == j {
            off + target
        } else {
            off
        }
    }))
}

/// Smallest admissible `λ_min/λ_max` for whitening.
pub const WHITENING_RATIO: f64 = 1e-10;

/// `M = Λ̂^{−1/2}` by symmetric eigendecomposition, so `Σ = Λ̂⁻¹`.
pub fn plugin_whitening(lambda: &DenseMatrix<f64>) -> Result<CovarianceFactor, LearningError> {
    let e = sym_eig(lambda)?;
    let (lo, hi) = (e.min_value(), e.max_value());
    if !(hi > 0.0) || lo <= WHITENING_RATIO * hi {
        return Err(LearningError::NearSingular { min: lo, max: hi });
    }
    Ok(CovarianceFactor {
        m: e.map_values(|l| 1.0 / l.sqrt()).symmetrized(),
    })
}
