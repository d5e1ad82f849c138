//! SVD-based pruning primitives.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Thin SVD `U diag(singulars) Vt` of an `N x M` matrix, rank `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactors<T> {
    pub u: Array2<T>,
    pub singulars: Vec<T>,
    pub vt: Array2<T>,
}

impl<T: Scalar> SvdFactors<T> {
    pub fn rank(&self) -> usize {
        self.singulars.len()
    }

    /// Shape `(N, M)` of the factored matrix.
    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.vt.ncols())
    }

    pub fn reconstruct(&self) -> Array2<T> {
        let mut us = self.u.clone();
        for (j, s) in self.singulars.iter().enumerate() {
            us.column_mut(j).mapv_inplace(|x| x * *s);
        }
        us.dot(&self.vt)
    }

    /// Flip signs so the largest-magnitude entry of every `U` column is
    /// nonnegative (first such entry on ties).
    fn canonicalize_signs(&mut self) {
        for j in 0..self.rank() {
            let col = self.u.column(j);
            let mut best = 0;
            for (i, x) in col.iter().enumerate() {
                if x.abs() > col[best].abs() {
                    best = i;
                }
            }
            if col[best] < T::zero() {
                self.u.column_mut(j).mapv_inplace(|x| -x);
                self.vt.row_mut(j).mapv_inplace(|x| -x);
            }
        }
    }

    fn keep(&self, idx: &[usize]) -> SvdFactors<T> {
        let (n, m) = self.shape();
        let mut u = Array2::zeros((n, idx.len()));
        let mut vt = Array2::zeros((idx.len(), m));
        for (new, &old) in idx.iter().enumerate() {
            u.column_mut(new).assign(&self.u.column(old));
            vt.row_mut(new).assign(&self.vt.row(old));
        }
        SvdFactors {
            u,
            singulars: idx.iter().map(|&i| self.singulars[i]).collect(),
            vt,
        }
    }
}

/// Full thin SVD, `k = min(N, M)`.
pub fn svd<T: Scalar>(matrix: ArrayView2<'_, T>) -> Result<SvdFactors<T>> {
    let (u, singulars, vt) = linalg::thin_svd(matrix)?;
    let mut f = SvdFactors { u, singulars, vt };
    f.canonicalize_signs();
    Ok(f)
}

/// Leading `k` singular triplets only.
pub fn svd_top<T: Scalar>(matrix: ArrayView2<'_, T>, k: usize) -> Result<SvdFactors<T>> {
    let (u, singulars, vt) = linalg::top_singular_triplets(matrix, k)?;
    let mut f = SvdFactors { u, singulars, vt };
    f.canonicalize_signs();
    Ok(f)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    /// Singular-value cutoff.
    pub threshold: f64,
    pub kept_above: usize,
    pub kept_below: usize,
    pub removed: usize,
    /// `N M`.
    pub params_before: usize,
    /// `k (N + M)` if the result would be split, otherwise `N M`.
    pub params_after: usize,
    pub split: bool,
}

/// Number of below-threshold values retained: `ceil(keep_fraction * count_below)`.
pub fn retained_below(count_below: usize, keep_fraction: f64) -> usize {
    let f = keep_fraction.clamp(0.0, 1.0);
    ((f * count_below as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Keep every singular value above `threshold` and the largest
/// `ceil(keep_fraction * count_below)` of those at or below it.
/// Exactly-zero singular values are always dropped.
pub fn truncate<T: Scalar>(
    factors: &SvdFactors<T>,
    threshold: T,
    keep_fraction: f64,
) -> (SvdFactors<T>, TruncationReport) {
    let k = factors.rank();
    let above: Vec<usize> = (0..k).filter(|&i| factors.singulars[i] > threshold).collect();
    // singulars are descending, so the below-threshold ones come in descending order too
    let below: Vec<usize> = (0..k).filter(|&i| factors.singulars[i] <= threshold).collect();
    let n_keep = retained_below(below.len(), keep_fraction);
    let mut idx = above.clone();
    idx.extend(below.iter().take(n_keep).filter(|&&i| factors.singulars[i] > T::zero()));
    let kept_above = above.len();
    let kept_below = idx.len() - kept_above;
    let out = factors.keep(&idx);
    let (n, m) = factors.shape();
    let split = should_split(n, m, out.rank());
    let report = TruncationReport {
        threshold: threshold.to_f64_lossy(),
        kept_above,
        kept_below,
        removed: k - idx.len(),
        params_before: n * m,
        params_after: if split { out.rank() * (n + m) } else { n * m },
        split,
    };
    (out, report)
}

/// `W1 = U sqrt(S)` (`N x k`) and `W2 = sqrt(S) Vt` (`k x M`).
pub fn split<T: Scalar>(factors: &SvdFactors<T>) -> Result<(Array2<T>, Array2<T>)> {
    if factors.rank() == 0 {
        return Err(Error::Degenerate("cannot split a rank-0 factorisation".into()));
    }
    let root: Array1<T> = factors.singulars.iter().map(|s| s.sqrt()).collect();
    let mut w1 = factors.u.clone();
    let mut w2 = factors.vt.clone();
    for (j, r) in root.iter().enumerate() {
        w1.column_mut(j).mapv_inplace(|x| x * *r);
        w2.row_mut(j).mapv_inplace(|x| x * *r);
    }
    Ok((w1, w2))
}

/// True iff the factored form has strictly fewer weights: `k (N + M) < N M`.
pub fn should_split(n: usize, m: usize, k: usize) -> bool {
    k * (n + m) < n * m
}

pub fn recombine<T: Scalar>(w1: ArrayView2<'_, T>, w2: ArrayView2<'_, T>) -> Result<Array2<T>> {
    if w1.ncols() != w2.nrows() {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            w1.nrows(),
            w1.ncols(),
            w2.nrows(),
            w2.ncols()
        )));
    }
    Ok(w1.dot(&w2))
}

/// Zero every entry with `|w| < xi`; returns the new matrix and how many
/// nonzero entries were cleared.
pub fn sparsify<T: Scalar>(matrix: ArrayView2<'_, T>, xi: T) -> Result<(Array2<T>, usize)> {
    if !(xi >= T::zero()) {
        return Err(Error::Parameter(format!(
            "sparsification threshold must be >= 0, got {xi}"
        )));
    }
    let mut zeroed = 0;
    let out = matrix.mapv(|w| {
        if w.abs() < xi {
            if w != T::zero() {
                zeroed += 1;
            }
            T::zero()
        } else {
            w
        }
    });
    Ok((out, zeroed))
}

/// `m x n x p x q` kernel tensor to an `m x (n p q)` matrix, row-major over `(n, p, q)`.
pub fn flatten_conv<T: Scalar>(tensor: ArrayView4<'_, T>) -> Array2<T> {
    let (m, n, p, q) = tensor.dim();
    // iteration is in logical order regardless of memory layout
    Array2::from_shape_vec((m, n * p * q), tensor.iter().copied().collect()).unwrap()
}

pub fn unflatten_conv<T: Scalar>(matrix: ArrayView2<'_, T>, dims: [usize; 4]) -> Result<Array4<T>> {
    let [m, n, p, q] = dims;
    if dims.contains(&0) {
        return Err(Error::Shape(format!(
            "kernel dimensions must be positive, got {dims:?}"
        )));
    }
    if matrix.dim() != (m, n * p * q) {
        return Err(Error::Shape(format!(
            "matrix is {}x{}, kernel {dims:?} needs {m}x{}",
            matrix.nrows(),
            matrix.ncols(),
            n * p * q
        )));
    }
    Ok(Array4::from_shape_fn((m, n, p, q), |(a, b, c, d)| {
        matrix[[a, (b * p + c) * q + d]]
    }))
}

/// Leading `k` columns/rows of a factorisation.
pub fn leading<T: Scalar>(factors: &SvdFactors<T>, k: usize) -> SvdFactors<T> {
    let k = k.min(factors.rank());
    SvdFactors {
        u: factors.u.slice(s![.., ..k]).to_owned(),
        singulars: factors.singulars[..k].to_vec(),
        vt: factors.vt.slice(s![..k, ..]).to_owned(),
    }
}
