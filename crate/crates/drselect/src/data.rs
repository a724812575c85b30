//! Observed-data container and CSV ingestion.

use std::path::Path;

use crate::error::{Error, Result};

/// A columnar sample of n units: covariates `x` (n x d, row major), a binary
/// treatment / non-missingness indicator `a`, and an outcome `y`.
///
/// `y` entries may be NaN on rows where `a = 0`; whether those rows are ever
/// read depends on the functional, and [`Dataset::validate_for_reads`]
/// enforces finiteness exactly where reads occur.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Vec<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
    n: usize,
    d: usize,
}

/// Column schema for CSV ingestion: explicit `y` and `a` column names plus a
/// prefix selecting covariate columns in file order.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub y_column: String,
    pub a_column: String,
    pub x_prefix: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            y_column: "y".into(),
            a_column: "a".into(),
            x_prefix: "x".into(),
        }
    }
}

impl Dataset {
    /// Assemble a dataset from parts, enforcing the structural invariants:
    /// n >= 2, a binary, x fully finite.
    pub fn new(x: Vec<f64>, a: Vec<u8>, y: Vec<f64>, n: usize, d: usize) -> Result<Dataset> {
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 rows, got {n}")));
        }
        if x.len() != n * d || a.len() != n || y.len() != n {
            return Err(Error::Validation(format!(
                "inconsistent dimensions: x {}, a {}, y {}, n {}, d {}",
                x.len(),
                a.len(),
                y.len(),
                n,
                d
            )));
        }
        for (i, &ai) in a.iter().enumerate() {
            if ai > 1 {
                return Err(Error::Validation(format!(
                    "a must be 0 or 1; row {} has {}",
                    i + 1,
                    ai
                )));
            }
        }
        for (i, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite covariate at row {}, column x{}",
                    i / d + 1,
                    i % d + 1
                )));
            }
        }
        Ok(Dataset { x, a, y, n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn a(&self, i: usize) -> u8 {
        self.a[i]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn a_slice(&self) -> &[u8] {
        &self.a
    }

    pub fn y_slice(&self) -> &[f64] {
        &self.y
    }

    /// Row-major covariate storage.
    pub fn x_slice(&self) -> &[f64] {
        &self.x
    }

    /// New dataset containing the given rows (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.d);
        let mut a = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        for &i in rows {
            x.extend_from_slice(self.row(i));
            a.push(self.a[i]);
            y.push(self.y[i]);
        }
        Dataset {
            x,
            a,
            y,
            n: rows.len(),
            d: self.d,
        }
    }

    /// Check that y is finite on every row the caller will read:
    /// `all_rows = true` for functionals reading every outcome, otherwise
    /// only rows with a = 1 are checked.
    pub fn validate_for_reads(&self, all_rows: bool) -> Result<()> {
        for i in 0..self.n {
            if (all_rows || self.a[i] == 1) && !self.y[i].is_finite() {
                return Err(Error::Validation(format!(
                    "outcome is not finite at row {} but is read by the requested functional",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Load a dataset from a UTF-8, comma-separated file with a header row.
///
/// The binary column accepts only the literals `0` and `1`. Empty, `NA`, or
/// `NaN` outcome cells are stored as NaN (legal only on rows never read by
/// the active functional); any other non-numeric cell is a parse error
/// naming the row and column.
pub fn load_dataset(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    load_dataset_str(&text, schema)
}

/// Same as [`load_dataset`] but from an in-memory string.
pub fn load_dataset_str(text: &str, schema: &CsvSchema) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty file: no header row".into()))?;
    let names: Vec<&str> = header.split(',').map(|s| s.trim()).collect();

    let find = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|&c| c == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let y_idx = find(&schema.y_column)?;
    let a_idx = find(&schema.a_column)?;
    let x_idx: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(i, c)| {
            c.starts_with(&schema.x_prefix) && *i != y_idx && *i != a_idx
        })
        .map(|(i, _)| i)
        .collect();
    if x_idx.is_empty() {
        return Err(Error::Schema(format!(
            "no covariate columns with prefix '{}'",
            schema.x_prefix
        )));
    }

    let d = x_idx.len();
    let mut x = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut n = 0usize;

    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row_num = lineno + 1; // 1-based data row, header excluded
        let cells: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if cells.len() != names.len() {
            return Err(Error::Parse {
                row: row_num,
                column: "<row>".into(),
                message: format!("expected {} cells, found {}", names.len(), cells.len()),
            });
        }

        let a_cell = cells[a_idx];
        let a_val = match a_cell {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                // Distinguish numeric-but-out-of-range from unparseable.
                if other.parse::<f64>().is_ok() {
                    return Err(Error::Validation(format!(
                        "a-value outside {{0,1}} at row {} (column '{}'): {}",
                        row_num, schema.a_column, other
                    )));
                }
                return Err(Error::Parse {
                    row: row_num,
                    column: schema.a_column.clone(),
                    message: format!("cannot parse '{other}' as 0/1"),
                });
            }
        };

        let y_cell = cells[y_idx];
        let y_val = if y_cell.is_empty() || y_cell.eq_ignore_ascii_case("na") || y_cell.eq_ignore_ascii_case("nan") {
            f64::NAN
        } else {
            y_cell.parse::<f64>().map_err(|_| Error::Parse {
                row: row_num,
                column: schema.y_column.clone(),
                message: format!("cannot parse '{y_cell}' as a number"),
            })?
        };

        for &j in &x_idx {
            let cell = cells[j];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: row_num,
                column: names[j].to_string(),
                message: format!("cannot parse '{cell}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite covariate at row {}, column '{}'",
                    row_num, names[j]
                )));
            }
            x.push(v);
        }
        a.push(a_val);
        y.push(y_val);
        n += 1;
    }

    Dataset::new(x, a, y, n, d)
}
