//! Dense linear algebra on `ndarray` storage, backed by `faer` decompositions.

use faer::{Accum, Mat, MatRef, Par, Side};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Below this smaller dimension, spectra come from a direct SVD instead of a Gram matrix.
const DIRECT_SVD_MAX: usize = 256;

pub fn to_faer<T: Scalar>(a: ArrayView2<'_, T>) -> Mat<T> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_faer<T: Scalar>(m: MatRef<'_, T>) -> Array2<T> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn check_finite<T: Scalar>(a: ArrayView2<'_, T>) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain("matrix contains non-finite entries".into()))
    }
}

fn matmul<T: Scalar>(lhs: MatRef<'_, T>, rhs: MatRef<'_, T>) -> Mat<T> {
    let mut out = Mat::<T>::zeros(lhs.nrows(), rhs.ncols());
    faer::linalg::matmul::matmul(out.as_mut(), Accum::Replace, lhs, rhs, T::one(), Par::Seq);
    out
}

/// Thin SVD `A = U diag(s) Vt` with `s` descending, `k = min(N, M)`.
pub fn thin_svd<T: Scalar>(a: ArrayView2<'_, T>) -> Result<(Array2<T>, Vec<T>, Array2<T>)> {
    check_finite(a)?;
    let (n, m) = a.dim();
    if n == 0 || m == 0 {
        return Ok((Array2::zeros((n, 0)), Vec::new(), Array2::zeros((0, m))));
    }
    let fa = to_faer(a);
    let svd = fa.as_ref().thin_svd().map_err(|e| {
        Error::Decomposition(format!(
            "thin SVD of {n}x{m} matrix did not converge ({e:?}); frobenius norm {:e}",
            frobenius(a).to_f64_lossy()
        ))
    })?;
    let k = n.min(m);
    let u = from_faer(svd.U());
    let v = svd.V();
    let vt = Array2::from_shape_fn((k, m), |(i, j)| v[(j, i)]);
    let s = (0..k).map(|i| svd.S()[i]).collect();
    Ok((u, s, vt))
}

/// Singular values in descending order.
pub fn singular_values<T: Scalar>(a: ArrayView2<'_, T>) -> Result<Vec<T>> {
    check_finite(a)?;
    if a.is_empty() {
        return Ok(Vec::new());
    }
    to_faer(a)
        .as_ref()
        .singular_values()
        .map_err(|e| Error::Decomposition(format!("singular values: {e:?}")))
}

/// Squared singular values in ascending order, length `min(N, M)`.
///
/// Large matrices go through the eigenvalues of the smaller Gram matrix.
pub fn squared_singular_values<T: Scalar>(a: ArrayView2<'_, T>) -> Result<Vec<T>> {
    let (n, m) = a.dim();
    if n.min(m) <= DIRECT_SVD_MAX {
        let mut sv: Vec<T> = singular_values(a)?.into_iter().map(|x| x * x).collect();
        sv.reverse();
        return Ok(sv);
    }
    check_finite(a)?;
    let fa = to_faer(a);
    let gram = if n <= m {
        matmul(fa.as_ref(), fa.as_ref().transpose())
    } else {
        matmul(fa.as_ref().transpose(), fa.as_ref())
    };
    let mut ev = gram
        .as_ref()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("Gram eigenvalues of {n}x{m}: {e:?}")))?;
    for x in ev.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ev)
}

/// Orthonormal basis of the column space of `a` (thin Q factor).
pub fn orthonormalize<T: Scalar>(a: ArrayView2<'_, T>) -> Array2<T> {
    let q = to_faer(a).as_ref().qr().compute_thin_Q();
    from_faer(q.as_ref())
}

/// `n x k` matrix with orthonormal columns drawn from the Haar measure.
pub fn random_orthonormal<T: Scalar>(n: usize, k: usize, rng: &mut impl rand::Rng) -> Array2<T> {
    let g = Array2::from_shape_fn((n, k), |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z)
    });
    let q = to_faer(g.view()).as_ref().qr();
    let r = q.thin_R();
    let mut qm = from_faer(q.compute_thin_Q().as_ref());
    // sign fix so the distribution is exactly Haar
    for j in 0..k {
        if r[(j, j)] < T::zero() {
            qm.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    qm
}

/// Leading `k` singular triplets by block subspace iteration.
///
/// Returns `(U, s, Vt)` with `U: N x k`, `s` descending and `Vt: k x M`.
pub fn top_singular_triplets<T: Scalar>(a: ArrayView2<'_, T>, k: usize) -> Result<(Array2<T>, Vec<T>, Array2<T>)> {
    check_finite(a)?;
    let (n, m) = a.dim();
    let kmax = n.min(m);
    if k == 0 {
        return Ok((Array2::zeros((n, 0)), Vec::new(), Array2::zeros((0, m))));
    }
    if k > kmax {
        return Err(Error::Parameter(format!(
            "requested {k} singular triplets of a {n}x{m} matrix"
        )));
    }
    let p = (k + 8).min(kmax);
    if 2 * p >= kmax {
        let (u, s, vt) = thin_svd(a)?;
        return Ok((
            u.slice(s![.., ..k]).to_owned(),
            s[..k].to_vec(),
            vt.slice(s![..k, ..]).to_owned(),
        ));
    }

    let fa = to_faer(a);
    let fa = fa.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0005_eed5);
    let mut v = Mat::<T>::from_fn(m, p, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::of(z)
    });
    // relative residual target for ||A v_i - s_i u_i||
    let tol = (T::epsilon() * T::of(1000.0)).max(T::of(1e-12));
    let mut ritz: Option<(Mat<T>, Vec<T>)> = None;
    let mut achieved = f64::INFINITY;
    for _ in 0..500 {
        let y = matmul(fa, v.as_ref());
        if let Some((u, sv)) = &ritz {
            let mut worst = T::zero();
            for i in 0..k {
                let r = (0..n)
                    .map(|r| {
                        let d = y[(r, i)] - u[(r, i)] * sv[i];
                        d * d
                    })
                    .sum::<T>()
                    .sqrt();
                worst = worst.max(r);
            }
            let rel = worst / sv[0].max(T::min_positive_value());
            achieved = rel.to_f64_lossy();
            if rel <= tol {
                let u = from_faer(u.as_ref()).slice(s![.., ..k]).to_owned();
                let vt = Array2::from_shape_fn((k, m), |(i, j)| v[(j, i)]);
                return Ok((u, sv[..k].to_vec(), vt));
            }
        }
        let q = y.as_ref().qr().compute_thin_Q();
        let b = matmul(q.as_ref().transpose(), fa);
        // Rayleigh-Ritz on the small p x M projection
        let svd = b
            .as_ref()
            .thin_svd()
            .map_err(|e| Error::Decomposition(format!("projected SVD: {e:?}")))?;
        let sv: Vec<T> = (0..p).map(|i| svd.S()[i]).collect();
        v = svd.V().to_owned();
        ritz = Some((matmul(q.as_ref(), svd.U()), sv));
    }
    Err(Error::Numerical {
        what: format!("subspace iteration for {k} leading singular triplets"),
        achieved,
        wanted: tol.to_f64_lossy(),
    })
}

/// Largest singular value.
///
/// Small matrices use a direct SVD; larger ones Golub-Kahan-Lanczos
/// bidiagonalisation with full reorthogonalisation, run in `f64`.
pub fn spectral_norm<T: Scalar>(a: ArrayView2<'_, T>) -> Result<T> {
    check_finite(a)?;
    let (n, m) = a.dim();
    if n == 0 || m == 0 {
        return Ok(T::zero());
    }
    if n.min(m) <= DIRECT_SVD_MAX {
        return Ok(singular_values(a)?[0]);
    }
    let a64 = a.mapv(|x| x.to_f64_lossy());
    lanczos_norm(a64.view()).map(T::of)
}

fn lanczos_norm(a: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, m) = a.dim();
    let steps_max = n.min(m).min(300);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a_c205);
    let mut v: Array1<f64> = Array1::from_shape_fn(m, |_| StandardNormal.sample(&mut rng));
    let nv = v.dot(&v).sqrt();
    v /= nv;
    let mut vs: Vec<Array1<f64>> = vec![v.clone()];
    let mut us: Vec<Array1<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last = 0.0;
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if fro == 0.0 {
        return Ok(0.0);
    }
    for step in 0..steps_max {
        let mut u = a.dot(&vs[step]);
        if let Some(prev) = us.last() {
            u.scaled_add(-betas[step - 1], prev);
        }
        for q in &us {
            let c = q.dot(&u);
            u.scaled_add(-c, q);
        }
        let alpha = u.dot(&u).sqrt();
        alphas.push(alpha);
        if alpha <= 1e-14 * fro {
            break;
        }
        u /= alpha;
        let mut w = a.t().dot(&u);
        w.scaled_add(-alpha, &vs[step]);
        for q in &vs {
            let c = q.dot(&w);
            w.scaled_add(-c, q);
        }
        us.push(u);
        let beta = w.dot(&w).sqrt();
        let est = bidiag_top(&alphas, &betas);
        if beta <= 1e-14 * fro {
            return Ok(est);
        }
        betas.push(beta);
        if step >= 3 && (est - last).abs() <= 1e-14 * est {
            return Ok(est);
        }
        last = est;
        vs.push(w / beta);
    }
    Ok(bidiag_top(
        &alphas,
        &betas[..alphas.len().saturating_sub(1).min(betas.len())],
    ))
}

/// Largest singular value of the upper bidiagonal matrix with diagonal `alphas`.
fn bidiag_top(alphas: &[f64], betas: &[f64]) -> f64 {
    let k = alphas.len();
    let b = Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            alphas[i]
        } else if j == i + 1 && i < betas.len() {
            betas[i]
        } else {
            0.0
        }
    });
    b.as_ref().singular_values().map(|s| s[0]).unwrap_or(f64::NAN)
}

pub fn frobenius<T: Scalar>(a: ArrayView2<'_, T>) -> T {
    a.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

/// Operator 1-norm: maximum absolute column sum.
pub fn max_abs_column_sum<T: Scalar>(a: ArrayView2<'_, T>) -> T {
    a.axis_iter(Axis(1))
        .map(|c| c.iter().map(|x| x.abs()).sum::<T>())
        .fold(T::zero(), T::max)
}

pub fn norm2<T: Scalar>(x: ArrayView1<'_, T>) -> T {
    x.iter().map(|v| *v * *v).sum::<T>().sqrt()
}

pub fn norm1<T: Scalar>(x: ArrayView1<'_, T>) -> T {
    x.iter().map(|v| v.abs()).sum()
}
