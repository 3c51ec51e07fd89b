//! Synthetic `Q, K ~ N(0, Λ)`, `V ~ N(0, I)` batches and their long-form
//! CSV (`role,row,col,value`).

use darkrf_core::learning::{BatchSource, Sequence};
use darkrf_core::tensor::{DenseMatrix, SeededRng};

use crate::lambda::LambdaSpec;
use crate::table::{f, Table};
use crate::HarnessError;

crate::settings! {
    /// `gen` settings.
    GenConfig, GenArgs, "gen" {
        /// Base seed
        seed: u64 = 0,
        /// Input covariance: isotropic:c | diagonal:a,b,... | random_spd:seed:cond[:max]
        lambda: LambdaSpec = LambdaSpec::Isotropic(1.0),
        /// Input dimension
        d: usize = 4,
        /// Sequence length
        l: usize = 128,
    }
}

/// Source the harness draws every synthetic batch from.
pub fn gaussian_source(lambda: &LambdaSpec, d: usize, l: usize, batch: usize) -> Result<BatchSource, HarnessError> {
    Ok(BatchSource::Gaussian {
        spec: lambda.input_spec(d)?,
        seq_len: l,
        batch,
        value_dim: d,
    })
}

pub fn generate(cfg: &GenConfig) -> Result<Sequence, HarnessError> {
    let source = gaussian_source(&cfg.lambda, cfg.d, cfg.l, 1)?;
    Ok(source.draw(SeededRng::new(cfg.seed, 0).split_named("gen")).remove(0))
}

pub fn qkv_table(seq: &Sequence) -> Table {
    let mut t = Table::new(&["role", "row", "col", "value"]);
    for (role, m) in [("q", &seq.q), ("k", &seq.k), ("v", &seq.v)] {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                t.push(vec![role.into(), i.to_string(), j.to_string(), f(m[(i, j)])]);
            }
        }
    }
    t
}

/// Inverse of [`qkv_table`]; every `(row, col)` of each role must appear once.
pub fn read_qkv(text: &str) -> Result<Sequence, HarnessError> {
    let t = Table::from_csv(text)?;
    for c in ["role", "row", "col", "value"] {
        if t.index(c).is_none() {
            return Err(HarnessError::BadInput(format!("missing column {c:?}")));
        }
    }
    let mut cells: [Vec<(usize, usize, f64)>; 3] = Default::default();
    for r in &t.rows {
        let slot = match t.get(r, "role") {
            "q" => 0,
            "k" => 1,
            "v" => 2,
            other => return Err(HarnessError::BadInput(format!("unknown role {other:?}"))),
        };
        let idx = |c: &str| {
            t.get(r, c)
                .parse::<usize>()
                .map_err(|_| HarnessError::BadInput(format!("{c} {:?}", t.get(r, c))))
        };
        let value: f64 = t
            .get(r, "value")
            .parse()
            .map_err(|_| HarnessError::BadInput(format!("value {:?}", t.get(r, "value"))))?;
        cells[slot].push((idx("row")?, idx("col")?, value));
    }
    let build = |name: &str, c: &[(usize, usize, f64)]| -> Result<DenseMatrix<f64>, HarnessError> {
        let rows = c.iter().map(|x| x.0 + 1).max().unwrap_or(0);
        let cols = c.iter().map(|x| x.1 + 1).max().unwrap_or(0);
        if rows * cols != c.len() || rows == 0 {
            return Err(HarnessError::BadInput(format!("{name}: {} cells for {rows}×{cols}", c.len())));
        }
        let mut m = DenseMatrix::filled(rows, cols, f64::NAN);
        for &(i, j, x) in c {
            m[(i, j)] = x;
        }
        if m.as_slice().iter().any(|x| x.is_nan()) {
            return Err(HarnessError::BadInput(format!("{name}: duplicate or missing cells")));
        }
        Ok(m)
    };
    let seq = Sequence {
        q: build("q", &cells[0])?,
        k: build("k", &cells[1])?,
        v: build("v", &cells[2])?,
    };
    if seq.q.shape() != seq.k.shape() || seq.v.rows() != seq.k.rows() {
        return Err(HarnessError::BadInput("q, k, v shapes disagree".into()));
    }
    Ok(seq)
}
