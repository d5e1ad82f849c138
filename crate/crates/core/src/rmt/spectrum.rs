use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Ascending list of non-negative eigenvalues, with the shape of the matrix
/// it came from.
///
/// `aspect` is `min(N, M) / max(N, M)` and `n_large` is `max(N, M)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    values: Vec<f64>,
    aspect: f64,
    n_large: usize,
}

impl Spectrum {
    /// Spectrum of a square matrix with these eigenvalues (any order).
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Spectrum::with_shape(values, n, n)
    }

    /// Spectrum of an `n_rows x n_cols` matrix; `values` must have
    /// `min(n_rows, n_cols)` entries.
    pub fn with_shape(mut values: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("empty spectrum".into()));
        }
        if values.len() != n_rows.min(n_cols) {
            return Err(Error::Shape(format!(
                "{} eigenvalues for a {n_rows}x{n_cols} matrix",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!(
                "spectrum values must be finite and >= 0, found {bad}"
            )));
        }
        values.sort_by(f64::total_cmp);
        let n_large = n_rows.max(n_cols);
        Ok(Spectrum {
            values,
            aspect: n_rows.min(n_cols) as f64 / n_large as f64,
            n_large,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn n_large(&self) -> usize {
        self.n_large
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// `#{values <= a} / M`.
    pub fn ecdf(&self, a: f64) -> f64 {
        self.values.partition_point(|v| *v <= a) as f64 / self.len() as f64
    }

    /// Every value multiplied by `k > 0`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Domain(format!("scale factor must be positive, got {k}")));
        }
        Ok(Spectrum {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        })
    }

    /// Square roots of the values, descending.
    pub fn singular_values(&self) -> Vec<f64> {
        self.values.iter().rev().map(|v| v.sqrt()).collect()
    }

    /// Number of values strictly above `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        self.len() - self.values.partition_point(|v| *v <= threshold)
    }

    /// Single-column CSV with a shape comment and a `value` header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let n_small = self.len();
        out.push_str(&format!("# rows={} cols={}\nvalue\n", n_small, self.n_large));
        for v in &self.values {
            out.push_str(&format!("{v:e}\n"));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads the format written by [`Spectrum::write_csv`]. The header and
    /// shape comment are optional; values must already be ascending.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut shape: Option<(usize, usize)> = None;
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                shape = parse_shape(rest).or(shape);
                continue;
            }
            if values.is_empty() && line.parse::<f64>().is_err() && line.chars().any(char::is_alphabetic) {
                continue;
            }
            let v: f64 = line
                .split(',')
                .next()
                .unwrap()
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: not a number: {line:?}", lineno + 1)))?;
            if let Some(prev) = values.last() {
                if v < *prev {
                    return Err(Error::format(
                        path,
                        format!("line {}: values must be in ascending order", lineno + 1),
                    ));
                }
            }
            values.push(v);
        }
        let (r, c) = shape.unwrap_or((values.len(), values.len()));
        Spectrum::with_shape(values, r, c).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn parse_shape(comment: &str) -> Option<(usize, usize)> {
    let mut rows = None;
    let mut cols = None;
    for tok in comment.split_whitespace() {
        if let Some(v) = tok.strip_prefix("rows=") {
            rows = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("cols=") {
            cols = v.parse().ok();
        }
    }
    Some((rows?, cols?))
}

/// Empirical spectral distribution of `matrix`: the squared singular values,
/// i.e. the eigenvalues of `W^T W` without any `1/N` normalisation.
pub fn esd<T: Scalar>(matrix: ArrayView2<'_, T>) -> Result<Spectrum> {
    let (n, m) = matrix.dim();
    let sq = linalg::squared_singular_values(matrix)?;
    Spectrum::with_shape(sq.into_iter().map(|x| x.to_f64_lossy()).collect(), n, m)
}
