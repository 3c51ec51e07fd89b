//! Exact softmax attention, random-feature linear attention and trivial
//! baselines. Attention is bidirectional (no causal mask).

use thiserror::Error;

use crate::features::{
    data_aware_prf_map, draw_projections, prf_map, trig_map, weighted_prf_map, FeatureError,
    FeatureMatrix, ProjectionLaw, ProjectionSet, TrigTarget,
};
use crate::scalar::{dot, norm_sq, Scalar};
use crate::tensor::{cholesky_psd, gaussian_sample, DenseMatrix, SeededRng, TensorError};

/// Denominator guard `Q′(K′ᵀ1) + eps`.
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone)]
pub struct AttentionOutput<T> {
    pub values: DenseMatrix<T>,
    /// Row normalizers before division, in the stabilized scale.
    pub denominators: Vec<T>,
    /// Rows whose raw denominator fell below `eps` (guarded, not dropped).
    pub underflow_rows: Vec<usize>,
}

pub fn default_scale<T: Scalar>(d: usize) -> T {
    T::one() / T::of(d as f64).sqrt()
}

fn check_qkv<T: Scalar>(q: &DenseMatrix<T>, k: &DenseMatrix<T>, v: &DenseMatrix<T>) -> Result<(), AttentionError> {
    if q.cols() != k.cols() || k.rows() != v.rows() || k.rows() == 0 {
        return Err(AttentionError::Shape(format!(
            "Q {:?}, K {:?}, V {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok(())
}

/// `softmax(scale·QKᵀ)·V` with per-row max subtraction.
pub fn exact_attention<T: Scalar>(
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    scale: T,
) -> Result<AttentionOutput<T>, AttentionError> {
    check_qkv(q, k, v)?;
    let (l, dv) = (q.rows(), v.cols());
    let mut out = DenseMatrix::zeros(l, dv);
    let mut denominators = Vec::with_capacity(l);
    let mut s = vec![T::zero(); k.rows()];
    for i in 0..l {
        let qi = q.row(i);
        for (sj, kj) in s.iter_mut().zip(k.row_iter()) {
            *sj = scale * dot(qi, kj);
        }
        let mx = s.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut den = T::zero();
        let row = out.row_mut(i);
        for (sj, vj) in s.iter().zip(v.row_iter()) {
            let w = (*sj - mx).exp();
            den = den + w;
            for (o, &x) in row.iter_mut().zip(vj) {
                *o = *o + w * x;
            }
        }
        row.iter_mut().for_each(|o| *o = *o / den);
        denominators.push(den);
    }
    Ok(AttentionOutput {
        values: out,
        denominators,
        underflow_rows: Vec::new(),
    })
}

/// Feature map used by [`rf_attention`].
#[derive(Debug, Clone)]
pub enum MapConfig<T> {
    /// Positive random features, `ω ~ N(0, I)`.
    Performer { orthogonal: bool },
    /// Trigonometric features for the softmax kernel.
    Trig,
    /// Data-aware PRF with factor `M` (`r×d`); draws are `u ~ N(0, I_r)`.
    DataAware { factor: DenseMatrix<T> },
    /// Fixed, e.g. trained, projection rows.
    Learned { omegas: DenseMatrix<T> },
    /// PRF with `ω ~ N(0, S)` and importance weights `p_I/ψ` folded into the features.
    ImportanceWeighted { proposal: DenseMatrix<T> },
}

impl<T> MapConfig<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Performer { orthogonal: false } => "performer",
            Self::Performer { orthogonal: true } => "performer_orf",
            Self::Trig => "trig",
            Self::DataAware { .. } => "data_aware",
            Self::Learned { .. } => "learned",
            Self::ImportanceWeighted { .. } => "importance",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOptions<T> {
    /// Logit scale; `None` means `1/√d`.
    pub scale: Option<T>,
    pub eps: T,
}

impl<T: Scalar> Default for AttentionOptions<T> {
    fn default() -> Self {
        Self {
            scale: None,
            eps: T::of(DEFAULT_EPS),
        }
    }
}

/// Maps queries and keys with one shared projection draw. Inputs are
/// multiplied by `√scale` first so the feature kernel targets `exp(scale·qᵀk)`.
pub fn map_inputs<T: Scalar>(
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    map: &MapConfig<T>,
    m: usize,
    rng: SeededRng,
    scale: T,
) -> Result<(FeatureMatrix<T>, FeatureMatrix<T>), AttentionError> {
    let d = q.cols();
    let root = scale.sqrt();
    let (qs, ks) = (q.scale(root), k.scale(root));
    Ok(match map {
        MapConfig::Performer { orthogonal } => {
            let p = draw_projections(rng, m, d, &ProjectionLaw::Isotropic, *orthogonal)?;
            (prf_map(&qs, &p)?, prf_map(&ks, &p)?)
        }
        MapConfig::Trig => {
            let p = draw_projections(rng, m, d, &ProjectionLaw::Isotropic, false)?;
            (trig_map(&qs, &p, TrigTarget::Softmax)?, trig_map(&ks, &p, TrigTarget::Softmax)?)
        }
        MapConfig::DataAware { factor } => {
            let u = gaussian_sample(rng, m, factor.rows());
            (data_aware_prf_map(&qs, &u, factor)?, data_aware_prf_map(&ks, &u, factor)?)
        }
        MapConfig::Learned { omegas } => {
            let p = ProjectionSet::learned(omegas.clone());
            (prf_map(&qs, &p)?, prf_map(&ks, &p)?)
        }
        MapConfig::ImportanceWeighted { proposal } => {
            let (omegas, log_w) = importance_draws(proposal, m, rng)?;
            (weighted_prf_map(&qs, &omegas, &log_w)?, weighted_prf_map(&ks, &omegas, &log_w)?)
        }
    })
}

/// `ω_j = L u_j` with `LLᵀ = S`, and `log(p_I/ψ)(ω_j)`. Since
/// `ωᵀS⁻¹ω = ‖u‖²`, the weight needs no explicit inverse.
pub fn importance_draws<T: Scalar>(
    proposal: &DenseMatrix<T>,
    m: usize,
    rng: SeededRng,
) -> Result<(DenseMatrix<T>, Vec<T>), AttentionError> {
    let chol = cholesky_psd(proposal, T::zero())?;
    let half = T::of(0.5);
    let logdet = chol.lower.diag().into_iter().map(|x| x.ln()).fold(T::zero(), |a, b| a + b) * T::of(2.0);
    let u: DenseMatrix<T> = gaussian_sample(rng, m, proposal.rows());
    let omegas = u.matmul_transposed(&chol.lower);
    let log_w = u
        .row_iter()
        .zip(omegas.row_iter())
        .map(|(ur, wr)| half * logdet - half * norm_sq(wr) + half * norm_sq(ur))
        .collect();
    Ok((omegas, log_w))
}

/// Key feature values sharing one global offset, so that the per-row
/// offsets cancel in the normalized output.
pub fn align_key_offsets<T: Scalar>(kf: &FeatureMatrix<T>) -> DenseMatrix<T> {
    let global = kf.offsets.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut vals = kf.values.clone();
    for (i, &off) in kf.offsets.iter().enumerate() {
        let f = (off - global).exp();
        vals.row_mut(i).iter_mut().for_each(|x| *x = *x * f);
    }
    vals
}

/// Intermediate products of the factored evaluation.
#[derive(Debug, Clone)]
pub struct LinearParts<T> {
    /// `K′` with a shared offset.
    pub keys: DenseMatrix<T>,
    /// `K′ᵀV`, `p×dv`
    pub kv: DenseMatrix<T>,
    /// `K′ᵀ1`
    pub ksum: Vec<T>,
    /// `Q′(K′ᵀV)`
    pub numerators: DenseMatrix<T>,
    pub output: AttentionOutput<T>,
}

/// `Q′(K′ᵀV) / (Q′(K′ᵀ1) + eps)`; never forms an `L×L` matrix.
pub fn linear_attention_parts<T: Scalar>(
    qf: &FeatureMatrix<T>,
    kf: &FeatureMatrix<T>,
    v: &DenseMatrix<T>,
    eps: T,
) -> Result<LinearParts<T>, AttentionError> {
    if qf.width() != kf.width() || kf.len() != v.rows() {
        return Err(AttentionError::Shape(format!(
            "Q′ {:?}, K′ {:?}, V {:?}",
            qf.values.shape(),
            kf.values.shape(),
            v.shape()
        )));
    }
    let keys = align_key_offsets(kf);
    let kv = keys.transpose_matmul(v);
    let ones = DenseMatrix::filled(keys.rows(), 1, T::one());
    let ksum = keys.transpose_matmul(&ones).into_vec();
    let numerators = qf.values.matmul(&kv);
    let denominators = qf.values.matvec(&ksum);
    let output = normalize(&numerators, denominators, eps);
    Ok(LinearParts {
        keys,
        kv,
        ksum,
        numerators,
        output,
    })
}

fn normalize<T: Scalar>(num: &DenseMatrix<T>, denominators: Vec<T>, eps: T) -> AttentionOutput<T> {
    let mut values = num.clone();
    let mut underflow_rows = Vec::new();
    for (i, &den) in denominators.iter().enumerate() {
        if !(den >= eps) {
            underflow_rows.push(i);
        }
        let g = den + eps;
        values.row_mut(i).iter_mut().for_each(|x| *x = *x / g);
    }
    if !underflow_rows.is_empty() {
        log::debug!("{} attention rows had denominators below eps", underflow_rows.len());
    }
    AttentionOutput {
        values,
        denominators,
        underflow_rows,
    }
}

pub fn feature_attention<T: Scalar>(
    qf: &FeatureMatrix<T>,
    kf: &FeatureMatrix<T>,
    v: &DenseMatrix<T>,
    eps: T,
) -> Result<AttentionOutput<T>, AttentionError> {
    Ok(linear_attention_parts(qf, kf, v, eps)?.output)
}

/// Reference path `normalize(Q′K′ᵀ)·V` through the explicit `L×L` matrix.
pub fn naive_feature_attention<T: Scalar>(
    qf: &FeatureMatrix<T>,
    kf: &FeatureMatrix<T>,
    v: &DenseMatrix<T>,
    eps: T,
) -> Result<AttentionOutput<T>, AttentionError> {
    let a = qf.values.matmul_transposed(&align_key_offsets(kf));
    if a.cols() != v.rows() {
        return Err(AttentionError::Shape(format!("A {:?}, V {:?}", a.shape(), v.shape())));
    }
    let den = a.row_iter().map(|r| r.iter().fold(T::zero(), |s, &x| s + x)).collect();
    Ok(normalize(&a.matmul(v), den, eps))
}

/// Row-normalized implicit attention weights `Q′K′ᵀ / (Q′K′ᵀ1 + eps)`.
pub fn implicit_weights<T: Scalar>(qf: &FeatureMatrix<T>, kf: &FeatureMatrix<T>, eps: T) -> DenseMatrix<T> {
    let mut a = qf.values.matmul_transposed(&align_key_offsets(kf));
    for i in 0..a.rows() {
        let row = a.row_mut(i);
        let g = row.iter().fold(T::zero(), |s, &x| s + x) + eps;
        row.iter_mut().for_each(|x| *x = *x / g);
    }
    a
}

/// Random-feature attention in `O(L·m·d)`.
pub fn rf_attention<T: Scalar>(
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    map: &MapConfig<T>,
    m: usize,
    rng: SeededRng,
    opts: AttentionOptions<T>,
) -> Result<AttentionOutput<T>, AttentionError> {
    check_qkv(q, k, v)?;
    let scale = opts.scale.unwrap_or_else(|| default_scale(q.cols()));
    let (qf, kf) = map_inputs(q, k, map, m, rng, scale)?;
    feature_attention(&qf, &kf, v, opts.eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    UniformRandom,
    Constant,
}

/// Attention that ignores queries and keys.
pub fn baseline_attention<T: Scalar>(kind: BaselineKind, v: &DenseMatrix<T>, rng: SeededRng) -> AttentionOutput<T> {
    let l = v.rows();
    match kind {
        BaselineKind::Constant => {
            let mean = v.column_means();
            AttentionOutput {
                values: DenseMatrix::from_fn(l, v.cols(), |_, j| mean[j]),
                denominators: vec![T::one(); l],
                underflow_rows: Vec::new(),
            }
        }
        BaselineKind::UniformRandom => {
            let mut s = rng.normals();
            let w = DenseMatrix::from_fn(l, l, |_, _| T::of(s.uniform()));
            let den: Vec<T> = w.row_iter().map(|r| r.iter().fold(T::zero(), |a, &b| a + b)).collect();
            let mut values = w.matmul(v);
            for (i, &d) in den.iter().enumerate() {
                values.row_mut(i).iter_mut().for_each(|x| *x = *x / d);
            }
            AttentionOutput {
                values,
                denominators: den,
                underflow_rows: Vec::new(),
            }
        }
    }
}
