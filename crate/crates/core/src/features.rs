//! Random projection sets and random feature maps.
//!
//! Positive random features (PRF) are stored in log-stabilized form: for
//! each input row the largest exponent is subtracted and recorded as an
//! offset, so `unstabilized(i, j) = values(i, j) · exp(offset(i))`. Attention
//! cancels the offsets between numerator and denominator; kernel estimation
//! reapplies them analytically.

use thiserror::Error;

use crate::scalar::{dot, norm_sq, Scalar};
use crate::tensor::{DenseMatrix, NormalStream, SeededRng};

/// Gram–Schmidt pivot norm below which a block is redrawn.
pub const DEGENERATE_PIVOT: f64 = 1e-12;

/// Redraws of a degenerate orthogonal block before giving up.
const BLOCK_REDRAWS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("orthogonal projections require the isotropic law")]
    OrthogonalNeedsIsotropic,
    #[error("{0:?} projections cannot be drawn, only trained or supplied")]
    NotDrawable(LawKind),
    #[error("{map} map does not accept {law:?} projections")]
    WrongLaw { map: &'static str, law: LawKind },
    #[error("Gram-Schmidt pivot {pivot:e} below {DEGENERATE_PIVOT:e} in block {block}")]
    DegenerateBlock { block: usize, pivot: f64 },
    #[error("non-finite feature exponent in row {row}")]
    NonFinite { row: usize },
}

/// Sampling law of the projection rows.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionLaw<T> {
    /// `ω ~ N(0, I_d)`
    Isotropic,
    /// `ω = Mᵀu`, `u ~ N(0, I_r)`; holds the `r×d` factor `M`.
    Covariance(DenseMatrix<T>),
    /// Rows are trainable parameters (learned feature kernel).
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawKind {
    Isotropic,
    Covariance,
    Learned,
}

impl<T> ProjectionLaw<T> {
    pub fn kind(&self) -> LawKind {
        match self {
            Self::Isotropic => LawKind::Isotropic,
            Self::Covariance(_) => LawKind::Covariance,
            Self::Learned => LawKind::Learned,
        }
    }
}

/// `m` projection rows plus their provenance.
#[derive(Debug, Clone)]
pub struct ProjectionSet<T> {
    /// `m×d`
    pub omegas: DenseMatrix<T>,
    /// Underlying `u` draws (`m×r`) for the covariance law.
    pub base: Option<DenseMatrix<T>>,
    pub law: ProjectionLaw<T>,
    pub orthogonal: bool,
    pub source: Option<SeededRng>,
}

impl<T: Scalar> ProjectionSet<T> {
    pub fn isotropic(omegas: DenseMatrix<T>) -> Self {
        Self {
            omegas,
            base: None,
            law: ProjectionLaw::Isotropic,
            orthogonal: false,
            source: None,
        }
    }

    pub fn learned(omegas: DenseMatrix<T>) -> Self {
        Self {
            law: ProjectionLaw::Learned,
            ..Self::isotropic(omegas)
        }
    }

    pub fn m(&self) -> usize {
        self.omegas.rows()
    }

    pub fn dim(&self) -> usize {
        self.omegas.cols()
    }
}

/// Draws `m` projection rows in dimension `d`.
///
/// Orthogonal sets are built in blocks of at most `d` rows (the last block
/// may be partial). Each block is Gram–Schmidt orthonormalized and every row
/// is rescaled to an independent `chi(d)` norm, so each row is marginally
/// `N(0, I_d)` while rows within a block are exactly orthogonal.
pub fn draw_projections<T: Scalar>(
    rng: SeededRng,
    m: usize,
    d: usize,
    law: &ProjectionLaw<T>,
    orthogonal: bool,
) -> Result<ProjectionSet<T>, FeatureError> {
    if m == 0 || d == 0 {
        return Err(FeatureError::Dimension(format!("m={m}, d={d}")));
    }
    match law {
        ProjectionLaw::Learned => Err(FeatureError::NotDrawable(LawKind::Learned)),
        ProjectionLaw::Covariance(factor) => {
            if orthogonal {
                return Err(FeatureError::OrthogonalNeedsIsotropic);
            }
            if factor.cols() != d {
                return Err(FeatureError::Dimension(format!(
                    "factor is {:?}, expected r x {d}",
                    factor.shape()
                )));
            }
            let mut u = DenseMatrix::zeros(m, factor.rows());
            rng.normals().fill_normal(u.as_mut_slice());
            Ok(ProjectionSet {
                omegas: u.matmul(factor),
                base: Some(u),
                law: law.clone(),
                orthogonal: false,
                source: Some(rng),
            })
        }
        ProjectionLaw::Isotropic => {
            let mut stream = rng.normals();
            let omegas = if orthogonal {
                orthogonal_rows(&mut stream, m, d)?
            } else {
                let mut w = DenseMatrix::zeros(m, d);
                stream.fill_normal(w.as_mut_slice());
                w
            };
            Ok(ProjectionSet {
                omegas,
                base: None,
                law: ProjectionLaw::Isotropic,
                orthogonal,
                source: Some(rng),
            })
        }
    }
}

fn orthogonal_rows<T: Scalar>(
    stream: &mut NormalStream,
    m: usize,
    d: usize,
) -> Result<DenseMatrix<T>, FeatureError> {
    let mut out = DenseMatrix::zeros(m, d);
    let mut start = 0;
    let mut block = 0;
    while start < m {
        let rows = (m - start).min(d);
        let mut attempt = 0;
        let q = loop {
            match orthonormal_block(stream, rows, d) {
                Ok(q) => break q,
                Err(pivot) => {
                    attempt += 1;
                    if attempt > BLOCK_REDRAWS {
                        return Err(FeatureError::DegenerateBlock { block, pivot });
                    }
                    log::debug!("redrawing degenerate orthogonal block {block} (pivot {pivot:e})");
                }
            }
        };
        for (r, dir) in q.iter().enumerate() {
            let norm = stream.chi(d);
            let dst = out.row_mut(start + r);
            for (o, &x) in dst.iter_mut().zip(dir) {
                *o = T::of(x * norm);
            }
        }
        start += rows;
        block += 1;
    }
    Ok(out)
}

/// Orthonormal rows by modified Gram–Schmidt with one reorthogonalization
/// pass. `Err(pivot)` when a row collapses.
fn orthonormal_block(stream: &mut NormalStream, rows: usize, d: usize) -> Result<Vec<Vec<f64>>, f64> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    let raw: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..d).map(|_| stream.normal()).collect())
        .collect();
    for mut v in raw {
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
        let n = norm_sq(&v).sqrt();
        if n < DEGENERATE_PIVOT {
            return Err(n);
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Ok(basis)
}

/// Target kernel of a trigonometric map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrigTarget {
    /// `exp(−½‖x−y‖²)`, `h(x) = 1`
    Gaussian,
    /// `exp(xᵀy)`, `h(x) = exp(½‖x‖²)`
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Prf,
    DataAwarePrf,
    Trig(TrigTarget),
}

/// Feature values in stabilized form.
#[derive(Debug, Clone)]
pub struct FeatureMatrix<T> {
    /// `L×m` for PRF maps, `L×2m` for trigonometric maps.
    pub values: DenseMatrix<T>,
    pub kind: MapKind,
    /// Per-row log-space shift; see module docs.
    pub offsets: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn unstabilized(&self, i: usize, j: usize) -> T {
        self.values[(i, j)] * self.offsets[i].exp()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }
}

/// Shared PRF kernel: `values(i,j) = exp(ω_jᵀx_i − h_i + lw_j − offset_i)/√m`.
fn exp_features<T: Scalar>(
    x: &DenseMatrix<T>,
    omegas: &DenseMatrix<T>,
    half_norms: &[T],
    log_weights: Option<&[T]>,
    kind: MapKind,
) -> Result<FeatureMatrix<T>, FeatureError> {
    let (l, m) = (x.rows(), omegas.rows());
    let inv_sqrt_m = T::one() / T::of(m as f64).sqrt();
    let mut values = DenseMatrix::zeros(l, m);
    let mut offsets = Vec::with_capacity(l);
    let mut exps = vec![T::zero(); m];
    for i in 0..l {
        let xi = x.row(i);
        for (j, e) in exps.iter_mut().enumerate() {
            *e = dot(xi, omegas.row(j)) - half_norms[i];
            if let Some(lw) = log_weights {
                *e = *e + lw[j];
            }
        }
        let off = exps.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        if !off.is_finite() || exps.iter().any(|e| e.is_nan()) {
            return Err(FeatureError::NonFinite { row: i });
        }
        for (v, &e) in values.row_mut(i).iter_mut().zip(&exps) {
            *v = (e - off).exp() * inv_sqrt_m;
        }
        offsets.push(off);
    }
    Ok(FeatureMatrix {
        values,
        kind,
        offsets,
    })
}

fn half_sq_norms<T: Scalar>(x: &DenseMatrix<T>) -> Vec<T> {
    let half = T::of(0.5);
    x.row_iter().map(|r| half * norm_sq(r)).collect()
}

fn check_dims<T: Scalar>(x: &DenseMatrix<T>, omegas: &DenseMatrix<T>) -> Result<(), FeatureError> {
    if x.cols() != omegas.cols() {
        return Err(FeatureError::Dimension(format!(
            "inputs have d={}, projections d={}",
            x.cols(),
            omegas.cols()
        )));
    }
    Ok(())
}

/// Positive random features `φ⁺(x) = exp(ωᵀx − ½‖x‖²)/√m`.
///
/// Accepts isotropic and learned projection sets; covariance-law sets belong
/// to [`data_aware_prf_map`].
pub fn prf_map<T: Scalar>(x: &DenseMatrix<T>, proj: &ProjectionSet<T>) -> Result<FeatureMatrix<T>, FeatureError> {
    if let ProjectionLaw::Covariance(_) = proj.law {
        return Err(FeatureError::WrongLaw {
            map: "prf",
            law: LawKind::Covariance,
        });
    }
    check_dims(x, &proj.omegas)?;
    exp_features(x, &proj.omegas, &half_sq_norms(x), None, MapKind::Prf)
}

/// PRF with a per-feature importance weight folded in symmetrically:
/// `values(i,j) ∝ √w_j · exp(ω_jᵀx_i − ½‖x_i‖²)`, so that inner products of
/// two such maps carry `w_j` once.
pub fn weighted_prf_map<T: Scalar>(
    x: &DenseMatrix<T>,
    omegas: &DenseMatrix<T>,
    log_weights: &[T],
) -> Result<FeatureMatrix<T>, FeatureError> {
    check_dims(x, omegas)?;
    if log_weights.len() != omegas.rows() {
        return Err(FeatureError::Dimension(format!(
            "{} weights for {} projections",
            log_weights.len(),
            omegas.rows()
        )));
    }
    let half = T::of(0.5);
    let lw: Vec<T> = log_weights.iter().map(|&w| half * w).collect();
    exp_features(x, omegas, &half_sq_norms(x), Some(&lw), MapKind::Prf)
}

/// Trigonometric features `(h(x)/√m)[cos(ωᵀx)…, sin(ωᵀx)…]`.
///
/// For the softmax target `h(x) = exp(½‖x‖²)` is kept in the offsets.
pub fn trig_map<T: Scalar>(
    x: &DenseMatrix<T>,
    proj: &ProjectionSet<T>,
    target: TrigTarget,
) -> Result<FeatureMatrix<T>, FeatureError> {
    if proj.law.kind() != LawKind::Isotropic {
        return Err(FeatureError::WrongLaw {
            map: "trig",
            law: proj.law.kind(),
        });
    }
    check_dims(x, &proj.omegas)?;
    let (l, m) = (x.rows(), proj.m());
    let inv_sqrt_m = T::one() / T::of(m as f64).sqrt();
    let mut values = DenseMatrix::zeros(l, 2 * m);
    for i in 0..l {
        let xi = x.row(i);
        for j in 0..m {
            let p = dot(xi, proj.omegas.row(j));
            values[(i, j)] = p.cos() * inv_sqrt_m;
            values[(i, m + j)] = p.sin() * inv_sqrt_m;
        }
    }
    let offsets = match target {
        TrigTarget::Gaussian => vec![T::zero(); l],
        TrigTarget::Softmax => half_sq_norms(x),
    };
    Ok(FeatureMatrix {
        values,
        kind: MapKind::Trig(target),
        offsets,
    })
}

/// Data-aware PRF `exp(ω̃ᵀx − ½xᵀΣx)/√m` with `ω̃_j = Mᵀu_j`, `Σ = MᵀM`.
///
/// `u` is `m×r` isotropic draws and `factor` is the `r×d` matrix `M`. With
/// `M = I` the output is bitwise identical to [`prf_map`] on `Ω = u`.
pub fn data_aware_prf_map<T: Scalar>(
    x: &DenseMatrix<T>,
    u: &DenseMatrix<T>,
    factor: &DenseMatrix<T>,
) -> Result<FeatureMatrix<T>, FeatureError> {
    if u.cols() != factor.rows() {
        return Err(FeatureError::Dimension(format!(
            "draws have r={}, factor is {:?}",
            u.cols(),
            factor.shape()
        )));
    }
    let omegas = u.matmul(factor);
    data_aware_prf_map_realized(x, &omegas, factor)
}

/// As [`data_aware_prf_map`] with `ω̃` already realized (`m×d`).
pub fn data_aware_prf_map_realized<T: Scalar>(
    x: &DenseMatrix<T>,
    omegas: &DenseMatrix<T>,
    factor: &DenseMatrix<T>,
) -> Result<FeatureMatrix<T>, FeatureError> {
    check_dims(x, omegas)?;
    if factor.cols() != x.cols() {
        return Err(FeatureError::Dimension(format!(
            "factor is {:?}, inputs have d={}",
            factor.shape(),
            x.cols()
        )));
    }
    let half = T::of(0.5);
    let half_norms: Vec<T> = x
        .row_iter()
        .map(|r| half * norm_sq(&factor.matvec(r)))
        .collect();
    exp_features(x, omegas, &half_norms, None, MapKind::DataAwarePrf)
}
