use std::fmt;
use std::str::FromStr;

use darkrf_core::sampling::GaussianInputSpec;
use darkrf_core::tensor::{gaussian_sample, sym_eig, DenseMatrix, SeededRng};

use crate::config::{fmt_f64, Setting};
use crate::HarnessError;

/// Input covariance `Λ` for synthetic queries and keys.
///
/// Text forms: `isotropic:c`, `diagonal:a,b,...`, `random_spd:seed:cond[:max]`.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSpec {
    Isotropic(f64),
    Diagonal(Vec<f64>),
    /// Random rotation of log-spaced eigenvalues from `max/condition` to `max`.
    RandomSpd { seed: u64, condition: f64, max: f64 },
}

pub const DEFAULT_SPD_MAX: f64 = 0.45;

impl LambdaSpec {
    pub fn resolve(&self, d: usize) -> Result<DenseMatrix<f64>, HarnessError> {
        if d == 0 {
            return Err(HarnessError::BadSpec("d must be positive".into()));
        }
        match self {
            Self::Isotropic(c) => Ok(DenseMatrix::identity(d).scale(*c)),
            Self::Diagonal(v) if v.len() != d => {
                Err(HarnessError::BadSpec(format!("{self} has {} entries, d={d}", v.len())))
            }
            Self::Diagonal(v) => Ok(DenseMatrix::from_diag(v)),
            Self::RandomSpd { seed, condition, max } => {
                let eig: Vec<f64> = (0..d)
                    .map(|i| {
                        let t = if d == 1 { 1.0 } else { i as f64 / (d - 1) as f64 };
                        max * condition.powf(t - 1.0)
                    })
                    .collect();
                let g: DenseMatrix<f64> = gaussian_sample(SeededRng::new(*seed, 0).split_named("random_spd"), d, d);
                let r = sym_eig(&g.add(&g.transpose()))?.vectors;
                Ok(DenseMatrix::from_fn(d, d, |i, j| (0..d).map(|k| r[(i, k)] * eig[k] * r[(j, k)]).sum()).symmetrized())
            }
        }
    }

    /// Dimension fixed by the spec itself, if any.
    pub fn implied_dim(&self) -> Option<usize> {
        match self {
            Self::Diagonal(v) => Some(v.len()),
            _ => None,
        }
    }

    pub fn input_spec(&self, d: usize) -> Result<GaussianInputSpec, HarnessError> {
        Ok(GaussianInputSpec::new(self.resolve(d)?)?)
    }
}

fn num(s: &str, what: &str) -> Result<f64, HarnessError> {
    let x: f64 = s.trim().parse().map_err(|_| HarnessError::BadSpec(format!("{what}: {s:?}")))?;
    if !x.is_finite() {
        return Err(HarnessError::BadSpec(format!("{what} must be finite")));
    }
    Ok(x)
}

impl FromStr for LambdaSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        let (kind, rest) = s.trim().split_once(':').ok_or_else(|| HarnessError::BadSpec(format!("{s:?}")))?;
        match kind {
            "isotropic" => {
                let c = num(rest, "isotropic scale")?;
                if c < 0.0 {
                    return Err(HarnessError::BadSpec(format!("negative variance {c}")));
                }
                Ok(Self::Isotropic(c))
            }
            "diagonal" => {
                let v = rest.split(',').map(|x| num(x, "diagonal entry")).collect::<Result<Vec<_>, _>>()?;
                if v.iter().any(|&x| x < 0.0) {
                    return Err(HarnessError::BadSpec(format!("negative variance in {s:?}")));
                }
                Ok(Self::Diagonal(v))
            }
            "random_spd" => {
                let parts: Vec<&str> = rest.split(':').collect();
                if !(2..=3).contains(&parts.len()) {
                    return Err(HarnessError::BadSpec(format!("expected random_spd:seed:cond[:max], got {s:?}")));
                }
                let seed = parts[0].trim().parse().map_err(|_| HarnessError::BadSpec(format!("seed {:?}", parts[0])))?;
                let condition = num(parts[1], "condition number")?;
                let max = parts.get(2).map_or(Ok(DEFAULT_SPD_MAX), |p| num(p, "max eigenvalue"))?;
                if condition < 1.0 || max <= 0.0 {
                    return Err(HarnessError::BadSpec(format!("need cond ≥ 1 and max > 0 in {s:?}")));
                }
                Ok(Self::RandomSpd { seed, condition, max })
            }
            _ => Err(HarnessError::BadSpec(format!("unknown kind {kind:?}"))),
        }
    }
}

impl fmt::Display for LambdaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Isotropic(c) => write!(f, "isotropic:{}", fmt_f64(*c)),
            Self::Diagonal(v) => {
                let parts: Vec<String> = v.iter().map(|x| fmt_f64(*x)).collect();
                write!(f, "diagonal:{}", parts.join(","))
            }
            Self::RandomSpd { seed, condition, max } => {
                write!(f, "random_spd:{seed}:{}:{}", fmt_f64(*condition), fmt_f64(*max))
            }
        }
    }
}

impl Setting for LambdaSpec {
    const LIST_SEPARATOR: char = ';';

    fn parse_setting(s: &str) -> Result<Self, String> {
        s.parse().map_err(|e: HarnessError| e.to_string())
    }

    fn render(&self) -> String {
        self.to_string()
    }
}
