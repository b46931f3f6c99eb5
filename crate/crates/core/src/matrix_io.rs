//! Sparse-row storage for the data matrix and response vector, plus the
//! Matrix Market / CSV readers and writers used by the CLI.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GlmError, Result};

/// Upper bound on `m * n` accepted from file headers.
const MAX_DENSE_CELLS: u128 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    MatrixMarket,
    Csv,
}

impl FromStr for MatrixFormat {
    type Err = GlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matrix-market" | "mtx" | "mm" => Ok(MatrixFormat::MatrixMarket),
            "csv" => Ok(MatrixFormat::Csv),
            other => Err(GlmError::invalid(format!("unknown matrix format '{other}'"))),
        }
    }
}

impl MatrixFormat {
    /// Guess the format from a file extension; defaults to Matrix Market.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::MatrixMarket,
        }
    }
}

/// Real `m x n` matrix stored row by row (CSR), with no explicit zeros.
///
/// Column indices within a row are strictly increasing and `max_row_nnz`
/// is the exact maximum row population.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    max_row_nnz: usize,
}

impl RowMatrix {
    /// Build from per-row `(column, value)` lists. Zeros are dropped; columns
    /// must be strictly increasing within each row.
    pub fn from_sparse_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.is_empty() || ncols == 0 {
            return Err(GlmError::invalid("matrix must have at least one row and one column"));
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut max_row_nnz = 0;
        row_ptr.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            let start = col_idx.len();
            let mut prev: Option<usize> = None;
            for (j, v) in row {
                if j >= ncols {
                    return Err(GlmError::IndexOutOfRange {
                        what: "column",
                        index: j,
                        bound: ncols,
                    });
                }
                if let Some(p) = prev {
                    if j <= p {
                        return Err(GlmError::invalid(format!(
                            "row {i}: column indices must be strictly increasing"
                        )));
                    }
                }
                prev = Some(j);
                if !v.is_finite() {
                    return Err(GlmError::NonFinite { line: i + 1 });
                }
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            max_row_nnz = max_row_nnz.max(col_idx.len() - start);
            row_ptr.push(col_idx.len());
        }
        Ok(RowMatrix {
            nrows: row_ptr.len() - 1,
            ncols,
            row_ptr,
            col_idx,
            values,
            max_row_nnz,
        })
    }

    pub fn from_dense_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut sparse = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(GlmError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {ncols}",
                    row.len()
                )));
            }
            sparse.push(row.iter().copied().enumerate().collect());
        }
        Self::from_sparse_rows(ncols, sparse)
    }

    pub fn from_dense(mat: &DMatrix<f64>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..mat.nrows())
            .map(|i| mat.row(i).iter().copied().collect())
            .collect();
        Self::from_dense_rows(&rows)
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n).map(|i| vec![(i, 1.0)]).collect();
        Self::from_sparse_rows(n, rows).expect("identity is well formed")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Maximum number of stored entries in any row (`r`).
    pub fn max_row_nnz(&self) -> usize {
        self.max_row_nnz
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
    }

    /// `A x` for a dense `x` of length `n`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row_dot(i, x)).collect()
    }

    pub fn is_zero_row(&self, i: usize) -> bool {
        self.row_nnz(i) == 0
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Dense `diag(scale) * A` restricted to the given rows.
    pub fn scaled_dense_rows(&self, rows: &[usize], scale: &[f64]) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(rows.len(), self.ncols);
        for (k, &i) in rows.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(k, j)] = scale[k] * v;
            }
        }
        d
    }

    pub fn rank(&self) -> usize {
        let d = self.to_dense();
        let svd = d.svd(false, false);
        let smax = svd.singular_values.max();
        if smax == 0.0 {
            return 0;
        }
        svd.singular_values
            .iter()
            .filter(|&&s| s > 1e-12 * smax)
            .count()
    }

    /// Serialize as Matrix Market coordinate real general (1-based).
    pub fn to_matrix_market(&self) -> String {
        let mut out = String::new();
        out.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let _ = writeln!(out, "{} {} {:?}", i + 1, j + 1, v);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.nrows {
            let line: Vec<String> = (0..self.ncols).map(|j| format!("{:?}", self.get(i, j))).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Response vector `b`; every entry finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseVector(Vec<f64>);

impl ResponseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite { line: k + 1 });
        }
        Ok(ResponseVector(values))
    }

    pub fn zeros(m: usize) -> Self {
        ResponseVector(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.trim().parse().map_err(|_| GlmError::Parse {
        line,
        message: format!("cannot parse '{}' as a real number", tok.trim()),
    })?;
    if !v.is_finite() {
        return Err(GlmError::NonFinite { line });
    }
    Ok(v)
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| GlmError::Parse {
        line,
        message: format!("cannot parse '{tok}' as an index"),
    })
}

/// Parse Matrix Market coordinate real general text. Duplicate entries are
/// rejected.
pub fn parse_matrix_market(text: &str) -> Result<RowMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(GlmError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let fields: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(GlmError::Parse {
            line: 1,
            message: "missing %%MatrixMarket matrix header".into(),
        });
    }
    if fields[2] != "coordinate" || fields[3] != "real" || fields[4] != "general" {
        return Err(GlmError::Parse {
            line: 1,
            message: format!("unsupported layout '{} {} {}'", fields[2], fields[3], fields[4]),
        });
    }

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (k, raw) in lines {
        let lineno = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match dims {
            None => {
                if toks.len() != 3 {
                    return Err(GlmError::Parse {
                        line: lineno,
                        message: "expected 'rows cols nnz'".into(),
                    });
                }
                let m = parse_usize(toks[0], lineno)?;
                let n = parse_usize(toks[1], lineno)?;
                let nnz = parse_usize(toks[2], lineno)?;
                if m == 0 || n == 0 {
                    return Err(GlmError::Parse {
                        line: lineno,
                        message: "matrix dimensions must be positive".into(),
                    });
                }
                if (m as u128) * (n as u128) > MAX_DENSE_CELLS {
                    return Err(GlmError::DimensionOverflow(format!("{m} x {n}")));
                }
                if nnz as u128 > (m as u128) * (n as u128) {
                    return Err(GlmError::DimensionOverflow(format!(
                        "{nnz} entries exceed {m} x {n}"
                    )));
                }
                triplets.reserve(nnz);
                dims = Some((m, n, nnz));
            }
            Some((m, n, _)) => {
                if toks.len() != 3 {
                    return Err(GlmError::Parse {
                        line: lineno,
                        message: "expected 'row col value'".into(),
                    });
                }
                let i = parse_usize(toks[0], lineno)?;
                let j = parse_usize(toks[1], lineno)?;
                if i == 0 || i > m || j == 0 || j > n {
                    return Err(GlmError::Parse {
                        line: lineno,
                        message: format!("entry ({i}, {j}) outside {m} x {n}"),
                    });
                }
                let v = parse_f64(toks[2], lineno)?;
                triplets.push((i - 1, j - 1, v));
            }
        }
    }
    let (m, n, nnz) = dims.ok_or(GlmError::Parse {
        line: 1,
        message: "missing size line".into(),
    })?;
    if triplets.len() != nnz {
        return Err(GlmError::Parse {
            line: 0,
            message: format!("header declares {nnz} entries, found {}", triplets.len()),
        });
    }
    triplets.sort_by_key(|&(i, j, _)| (i, j));
    if let Some(w) = triplets.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
        return Err(GlmError::Parse {
            line: 0,
            message: format!("duplicate entry ({}, {})", w[0].0 + 1, w[0].1 + 1),
        });
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (i, j, v) in triplets {
        rows[i].push((j, v));
    }
    RowMatrix::from_sparse_rows(n, rows)
}

/// Parse dense comma-separated rows; zeros are dropped.
pub fn parse_csv(text: &str) -> Result<RowMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let lineno = k + 1;
        let record = record.map_err(|e| GlmError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|tok| parse_f64(tok, lineno))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(GlmError::Parse {
                    line: lineno,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GlmError::Parse {
            line: 1,
            message: "empty file".into(),
        });
    }
    RowMatrix::from_dense_rows(&rows)
}

pub fn load_matrix(path: impl AsRef<Path>, format: MatrixFormat) -> Result<RowMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GlmError::io(path, e))?;
    match format {
        MatrixFormat::MatrixMarket => parse_matrix_market(&text),
        MatrixFormat::Csv => parse_csv(&text),
    }
}

pub fn parse_response(text: &str) -> Result<ResponseVector> {
    let mut values = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') || line.starts_with('#') {
            continue;
        }
        values.push(parse_f64(line, k + 1)?);
    }
    ResponseVector::new(values)
}

/// One value per line.
pub fn load_response(path: impl AsRef<Path>) -> Result<ResponseVector> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GlmError::io(path, e))?;
    parse_response(&text)
}

/// Append `b` as column `n`, so that row `i` dotted with `(x, -1)` gives
/// `<a_i, x> - b_i`. Zero entries of `b` are not stored.
pub fn augment_bias(a: &RowMatrix, b: &ResponseVector) -> Result<RowMatrix> {
    if a.nrows() != b.len() {
        return Err(GlmError::DimensionMismatch(format!(
            "matrix has {} rows but response has {} entries",
            a.nrows(),
            b.len()
        )));
    }
    let n = a.ncols();
    let rows = (0..a.nrows())
        .map(|i| {
            let (cols, vals) = a.row(i);
            let mut row: Vec<(usize, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
            row.push((n, b.as_slice()[i]));
            row
        })
        .collect();
    RowMatrix::from_sparse_rows(n + 1, rows)
}
