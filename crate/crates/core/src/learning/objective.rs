//! Training objectives and their analytic gradients.
//!
//! Both parameterizations share the exponent `a_ij = ω_jᵀx_i − h(x_i)`:
//! data-aware features use `ω_j = Mᵀu_j` and `h = ½‖Mx‖²`, learned
//! projections use trainable `ω_j` and `h = ½‖x‖²`. Backpropagation runs
//! to `∂L/∂a` and then to the parameters.

use crate::attention::{exact_attention, linear_attention_parts, AttentionOptions, default_scale};
use crate::features::{data_aware_prf_map_realized, prf_map, FeatureMatrix, ProjectionSet};
use crate::kernels::{mean_exp, softmax_kernel_exact};
use crate::scalar::{dot, norm_sq};
use crate::tensor::{gaussian_sample, DenseMatrix, SeededRng};

use super::{GaussianInputSpec, LearningError};

/// One attention sequence; `kernel_mse` pairs row `i` of `q` with row `i` of `k`.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub q: DenseMatrix<f64>,
    pub k: DenseMatrix<f64>,
    pub v: DenseMatrix<f64>,
}

/// Where training batches come from.
#[derive(Debug, Clone)]
pub enum BatchSource {
    /// `q, k ~ N(0, Λ)`, `v ~ N(0, I)`, fresh each step.
    Gaussian {
        spec: GaussianInputSpec,
        seq_len: usize,
        batch: usize,
        value_dim: usize,
    },
    /// The same sequences every step.
    Fixed(Vec<Sequence>),
}

impl BatchSource {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { spec, .. } => spec.dim(),
            Self::Fixed(s) => s.first().map_or(0, |s| s.q.cols()),
        }
    }

    pub fn draw(&self, rng: SeededRng) -> Vec<Sequence> {
        match self {
            Self::Fixed(s) => s.clone(),
            Self::Gaussian {
                spec,
                seq_len,
                batch,
                value_dim,
            } => (0..*batch)
                .map(|b| {
                    let r = rng.split(b as u64);
                    Sequence {
                        q: spec.sample(r.split_named("q"), *seq_len),
                        k: spec.sample(r.split_named("k"), *seq_len),
                        v: gaussian_sample(r.split_named("v"), *seq_len, *value_dim),
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Mean over pairs of `(κ̂(q,k) − exp(qᵀk))²`.
    KernelMse,
    /// Mean over sequences of the per-entry squared error between
    /// random-feature and exact attention.
    AttentionMse,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Self::KernelMse => "kernel_mse",
            Self::AttentionMse => "attention_mse",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kernel_mse" => Ok(Self::KernelMse),
            "attention_mse" => Ok(Self::AttentionMse),
            _ => Err(format!("unknown objective {s:?} (kernel_mse | attention_mse)")),
        }
    }
}

/// Trainable quantity and the fixed draws it acts on.
#[derive(Debug, Clone, Copy)]
pub enum Params<'a> {
    /// Factor `M` with draws `u` (`m×r`).
    Factor { m: &'a DenseMatrix<f64>, u: &'a DenseMatrix<f64> },
    /// Projection rows `Ω` (`m×d`).
    Projections { omegas: &'a DenseMatrix<f64> },
}

impl Params<'_> {
    fn shape(&self) -> (usize, usize) {
        match self {
            Self::Factor { m, .. } => m.shape(),
            Self::Projections { omegas } => omegas.shape(),
        }
    }

    fn omegas(&self) -> DenseMatrix<f64> {
        match self {
            Self::Factor { m, u } => u.matmul(m),
            Self::Projections { omegas } => (*omegas).clone(),
        }
    }

    /// `h(x)`: `½‖Mx‖²` or `½‖x‖²`.
    fn half_norm(&self, x: &[f64]) -> f64 {
        match self {
            Self::Factor { m, .. } => 0.5 * norm_sq(&m.matvec(x)),
            Self::Projections { .. } => 0.5 * norm_sq(x),
        }
    }

    fn features(&self, x: &DenseMatrix<f64>, omegas: &DenseMatrix<f64>) -> Result<FeatureMatrix<f64>, LearningError> {
        Ok(match self {
            Self::Factor { m, .. } => data_aware_prf_map_realized(x, omegas, m)?,
            Self::Projections { .. } => prf_map(x, &ProjectionSet::learned(omegas.clone()))?,
        })
    }

    /// Accumulates `Σ_ij dA_ij ∂a_ij/∂θ` into `grad` for inputs `x`.
    fn backprop_exponents(&self, x: &DenseMatrix<f64>, d_a: &DenseMatrix<f64>, grad: &mut DenseMatrix<f64>) {
        match self {
            Self::Factor { m, u } => {
                // ∂a_ij/∂M = (u_j − Mx_i)x_iᵀ
                let xt = x.matmul_transposed(m);
                let mut r = d_a.matmul(u);
                for i in 0..r.rows() {
                    let s: f64 = d_a.row(i).iter().sum();
                    for (rv, &t) in r.row_mut(i).iter_mut().zip(xt.row(i)) {
                        *rv -= s * t;
                    }
                }
                *grad = grad.add(&r.transpose_matmul(x));
            }
            Self::Projections { .. } => {
                // ∂a_ij/∂ω_j = x_i
                *grad = grad.add(&d_a.transpose_matmul(x));
            }
        }
    }
}

/// Loss and, unless `with_grad` is false, its gradient in the shape of the parameters.
pub fn objective_and_grad(
    objective: Objective,
    params: Params<'_>,
    batch: &[Sequence],
    opts: AttentionOptions<f64>,
    with_grad: bool,
) -> Result<(f64, DenseMatrix<f64>), LearningError> {
    if batch.is_empty() {
        return Err(LearningError::Dimension("empty batch".into()));
    }
    let (pr, pc) = params.shape();
    let mut grad = DenseMatrix::zeros(pr, pc);
    let omegas = params.omegas();
    let loss = match objective {
        Objective::KernelMse => kernel_mse(params, &omegas, batch, &mut grad, with_grad)?,
        Objective::AttentionMse => attention_mse(params, &omegas, batch, opts, &mut grad, with_grad)?,
    };
    Ok((loss, grad))
}

fn kernel_mse(
    params: Params<'_>,
    omegas: &DenseMatrix<f64>,
    batch: &[Sequence],
    grad: &mut DenseMatrix<f64>,
    with_grad: bool,
) -> Result<f64, LearningError> {
    let pairs: usize = batch.iter().map(|s| s.q.rows()).sum();
    let m = omegas.rows();
    let mut loss = 0.0;
    for seq in batch {
        let (l, d) = seq.q.shape();
        if seq.k.shape() != (l, d) || omegas.cols() != d {
            return Err(LearningError::Dimension(format!("pairs {:?}/{:?}, projections {:?}", seq.q.shape(), seq.k.shape(), omegas.shape())));
        }
        let mut d_aq = DenseMatrix::zeros(l, m);
        let mut d_ak = DenseMatrix::zeros(l, m);
        for i in 0..l {
            let (q, k) = (seq.q.row(i), seq.k.row(i));
            let (hq, hk) = (params.half_norm(q), params.half_norm(k));
            let exps: Vec<f64> = omegas
                .row_iter()
                .map(|w| (dot(w, q) - hq) + (dot(w, k) - hk) + 0.0)
                .collect();
            let est = mean_exp(&exps, false)?.value;
            let err = est - softmax_kernel_exact(q, k)?;
            loss += err * err;
            if with_grad {
                let c = 2.0 * err / (pairs * m) as f64;
                for (j, e) in exps.iter().enumerate() {
                    let g = c * e.exp();
                    d_aq[(i, j)] = g;
                    d_ak[(i, j)] = g;
                }
            }
        }
        if with_grad {
            params.backprop_exponents(&seq.q, &d_aq, grad);
            params.backprop_exponents(&seq.k, &d_ak, grad);
        }
    }
    Ok(loss / pairs as f64)
}

fn attention_mse(
    params: Params<'_>,
    omegas: &DenseMatrix<f64>,
    batch: &[Sequence],
    opts: AttentionOptions<f64>,
    grad: &mut DenseMatrix<f64>,
    with_grad: bool,
) -> Result<f64, LearningError> {
    let mut loss = 0.0;
    for seq in batch {
        let scale = opts.scale.unwrap_or_else(|| default_scale(seq.q.cols()));
        let root = scale.sqrt();
        let (qs, ks) = (seq.q.scale(root), seq.k.scale(root));
        let qf = params.features(&qs, omegas)?;
        let kf = params.features(&ks, omegas)?;
        let parts = linear_attention_parts(&qf, &kf, &seq.v, opts.eps)?;
        let exact = exact_attention(&seq.q, &seq.k, &seq.v, scale)?;
        let out = &parts.output.values;
        let diff = out.sub(&exact.values);
        let n = (diff.rows() * diff.cols()) as f64;
        loss += dot(diff.as_slice(), diff.as_slice()) / n;
        if !with_grad {
            continue;
        }
        let g = diff.scale(2.0 / (n * batch.len() as f64));
        let (l, p) = (qf.len(), qf.width());
        let mut d_n = DenseMatrix::zeros(l, seq.v.cols());
        let mut d_d = vec![0.0; l];
        for i in 0..l {
            let den = parts.output.denominators[i] + opts.eps;
            for (dn, &gi) in d_n.row_mut(i).iter_mut().zip(g.row(i)) {
                *dn = gi / den;
            }
            d_d[i] = -dot(g.row(i), out.row(i)) / den;
        }
        // Q′: dN·(K′ᵀV)ᵀ + dD·(K′ᵀ1)ᵀ
        let mut d_p = d_n.matmul_transposed(&parts.kv);
        for i in 0..l {
            for (x, &z) in d_p.row_mut(i).iter_mut().zip(&parts.ksum) {
                *x += d_d[i] * z;
            }
        }
        // K′: V·dSᵀ + 1·dzᵀ with dS = Q′ᵀdN, dz = Q′ᵀdD
        let d_s = qf.values.transpose_matmul(&d_n);
        let d_z = qf.values.transpose_matmul(&DenseMatrix::from_vec(l, 1, d_d).expect("column")).into_vec();
        let mut d_kt = seq.v.matmul_transposed(&d_s);
        for r in 0..d_kt.rows() {
            for (x, &z) in d_kt.row_mut(r).iter_mut().zip(&d_z) {
                *x += z;
            }
        }
        let d_aq = DenseMatrix::from_fn(l, p, |i, j| d_p[(i, j)] * qf.values[(i, j)]);
        let d_ak = DenseMatrix::from_fn(kf.len(), p, |i, j| d_kt[(i, j)] * parts.keys[(i, j)]);
        params.backprop_exponents(&qs, &d_aq, grad);
        params.backprop_exponents(&ks, &d_ak, grad);
    }
    Ok(loss / batch.len() as f64)
}

/// `‖X − A‖²_F` and its gradient `2(X − A)`.
pub fn quadratic_objective(x: &DenseMatrix<f64>, target: &DenseMatrix<f64>) -> (f64, DenseMatrix<f64>) {
    let d = x.sub(target);
    (dot(d.as_slice(), d.as_slice()), d.scale(2.0))
}

/// Max over coordinates of `|g − g_fd| / max(1e-8, |g_fd|)` with central
/// differences of step `fd_eps`.
pub fn grad_check_fn(
    x: &DenseMatrix<f64>,
    mut f: impl FnMut(&DenseMatrix<f64>) -> (f64, DenseMatrix<f64>),
    fd_eps: f64,
) -> f64 {
    let (_, g) = f(x);
    let mut worst: f64 = 0.0;
    for idx in 0..x.as_slice().len() {
        let mut plus = x.clone();
        plus.as_mut_slice()[idx] += fd_eps;
        let mut minus = x.clone();
        minus.as_mut_slice()[idx] -= fd_eps;
        let fd = (f(&plus).0 - f(&minus).0) / (2.0 * fd_eps);
        let a = g.as_slice()[idx];
        worst = worst.max((a - fd).abs() / fd.abs().max(1e-8));
    }
    worst
}

/// Gradient check of an objective with respect to whichever parameter
/// `params` holds, using its fixed draws on both sides.
pub fn grad_check(
    objective: Objective,
    params: Params<'_>,
    batch: &[Sequence],
    opts: AttentionOptions<f64>,
    fd_eps: f64,
) -> Result<f64, LearningError> {
    let eval = |x: &DenseMatrix<f64>| -> Result<(f64, DenseMatrix<f64>), LearningError> {
        let p = match params {
            Params::Factor { u, .. } => Params::Factor { m: x, u },
            Params::Projections { .. } => Params::Projections { omegas: x },
        };
        objective_and_grad(objective, p, batch, opts, true)
    };
    let x0 = match params {
        Params::Factor { m, .. } => m.clone(),
        Params::Projections { omegas } => omegas.clone(),
    };
    eval(&x0)?;
    let mut failure = None;
    let worst = grad_check_fn(
        &x0,
        |x| match eval(x) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                (f64::NAN, DenseMatrix::zeros(x.rows(), x.cols()))
            }
        },
        fd_eps,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}
