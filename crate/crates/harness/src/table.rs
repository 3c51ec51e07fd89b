use crate::config::fmt_f64;
use crate::HarnessError;

/// Rows of one experiment with a fixed column set.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Columns whose values depend on the machine (wall-clock time).
    pub nondeterministic: Vec<String>,
}

/// CSV cell for a float.
pub fn f(x: f64) -> String {
    fmt_f64(x)
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            nondeterministic: Vec::new(),
        }
    }

    pub fn with_nondeterministic(mut self, columns: &[&str]) -> Self {
        self.nondeterministic = columns.iter().map(|c| c.to_string()).collect();
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width for {:?}", self.columns);
        self.rows.push(row);
    }

    pub fn index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    /// Cell `column` of `row`; panics on an unknown column.
    pub fn get<'a>(&self, row: &'a [String], column: &str) -> &'a str {
        let i = self.index(column).unwrap_or_else(|| panic!("no column {column:?}"));
        &row[i]
    }

    /// Numeric cell; empty cells read as NaN.
    pub fn num(&self, row: &[String], column: &str) -> f64 {
        let s = self.get(row, column);
        if s.is_empty() {
            f64::NAN
        } else {
            s.parse().unwrap_or(f64::NAN)
        }
    }

    /// Rows whose `column` equals `value`.
    pub fn filter<'a>(&'a self, column: &'a str, value: &'a str) -> impl Iterator<Item = &'a Vec<String>> + 'a {
        self.rows.iter().filter(move |r| self.get(r, column) == value)
    }

    /// Copy without the machine-dependent columns.
    pub fn deterministic_part(&self) -> Table {
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&i| !self.nondeterministic.contains(&self.columns[i]))
            .collect();
        Table {
            columns: keep.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self.rows.iter().map(|r| keep.iter().map(|&i| r[i].clone()).collect()).collect(),
            nondeterministic: Vec::new(),
        }
    }

    /// CSV text with a `#` header: the command, the resolved config as
    /// `key=value` lines and the non-deterministic columns.
    pub fn to_csv(&self, command: &str, echo: &[(&str, String)]) -> Result<String, HarnessError> {
        let mut head = format!("# darkrf {command}\n");
        for (k, v) in echo {
            head.push_str(&format!("# {k}={v}\n"));
        }
        if !self.nondeterministic.is_empty() {
            head.push_str(&format!("# nondeterministic columns: {}\n", self.nondeterministic.join(" ")));
        }
        let mut w = csv::Writer::from_writer(head.into_bytes());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::BadInput(e.to_string()))
    }

    /// Parses CSV text, skipping `#` lines. Non-deterministic columns are
    /// recovered from the header when present.
    pub fn from_csv(text: &str) -> Result<Table, HarnessError> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        let nondeterministic = text
            .lines()
            .find_map(|l| l.strip_prefix("# nondeterministic columns:"))
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .unwrap_or_default();
        Ok(Table {
            columns,
            rows,
            nondeterministic,
        })
    }
}
