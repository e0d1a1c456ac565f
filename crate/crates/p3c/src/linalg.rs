//! Small dense symmetric linear algebra: Cholesky with jitter escalation,
//! cyclic Jacobi eigendecomposition, power iteration, and triangular solves.
//!
//! Problem sizes here are modest (support sets and clusters, a few hundred at
//! most), so hand-rolled kernels keep the core generic over the scalar type.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::{count, lit, Scalar};

/// Lower-triangular Cholesky factor of a symmetric PSD matrix.
///
/// Escalating diagonal jitter (relative 1e-12, 1e-10, 1e-8) is tried before
/// giving up; borderline-PSD matrices from block constructions at large p
/// need it in floating point.
pub fn cholesky_psd<T: Scalar>(a: &Array2<T>) -> Result<Array2<T>> {
    let scale = max_diag(a);
    for &jit in &[0.0, 1e-12, 1e-10, 1e-8] {
        let eps = lit::<T>(jit) * scale;
        if let Some(l) = cholesky_attempt(a, eps) {
            return Ok(l);
        }
    }
    Err(Error::NotPsd(format!(
        "cholesky failed for {}x{} matrix (max diag {:e})",
        a.nrows(),
        a.ncols(),
        scale.to_f64().unwrap_or(f64::NAN)
    )))
}

fn max_diag<T: Scalar>(a: &Array2<T>) -> T {
    let mut m = T::zero();
    for i in 0..a.nrows() {
        m = m.max(a[[i, i]].abs());
    }
    if m == T::zero() {
        T::one()
    } else {
        m
    }
}

fn cholesky_attempt<T: Scalar>(a: &Array2<T>, jitter: T) -> Option<Array2<T>> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]] + jitter;
        for k in 0..j {
            d = d - l[[j, k]] * l[[j, k]];
        }
        if d <= T::zero() {
            // Allow exact zero pivots (PSD, not PD) when the residual is tiny.
            let tol = -lit::<T>(1e-12) * max_diag(a);
            if d >= tol {
                l[[j, j]] = T::zero();
                continue;
            }
            return None;
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = if dj > T::zero() { s / dj } else { T::zero() };
        }
    }
    Some(l)
}

/// Solve `L y = b` then `L' x = y` for a lower-triangular `L` (SPD solve).
pub fn cholesky_solve<T: Scalar>(l: &Array2<T>, b: &Array1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s = s - l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// eigenvectors are the columns of the returned matrix.
pub fn jacobi_eigen<T: Scalar>(a: &Array2<T>) -> Result<(Vec<T>, Array2<T>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let mut m = a.clone();
    let mut v = Array2::<T>::eye(n);
    let eps = lit::<T>(1e-15);
    let max_sweeps = 64;
    let norm0 = frobenius(&m).max(T::one());
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= eps * norm0 {
                    continue;
                }
                rotated = true;
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (lit::<T>(2.0) * apq);
                let t = {
                    let s = if theta >= T::zero() { T::one() } else { -T::one() };
                    s / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = (t * t + T::one()).sqrt().recip();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            let mut pairs: Vec<(T, usize)> = (0..n).map(|i| (m[[i, i]], i)).collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let vals: Vec<T> = pairs.iter().map(|p| p.0).collect();
            let mut vecs = Array2::<T>::zeros((n, n));
            for (col, &(_, src)) in pairs.iter().enumerate() {
                for r in 0..n {
                    vecs[[r, col]] = v[[r, src]];
                }
            }
            return Ok((vals, vecs));
        }
    }
    Err(Error::NonConvergence(format!(
        "jacobi eigen did not converge for {n}x{n} matrix"
    )))
}

fn frobenius<T: Scalar>(a: &Array2<T>) -> T {
    a.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Dominant eigenpair of a symmetric PSD matrix by power iteration.
///
/// Converges when the eigenvalue estimate is stable to `rel_tol`; errors out
/// after `max_iter` sweeps. The start vector carries a small index-dependent
/// tilt so it is never orthogonal to the dominant eigenvector of an
/// exchangeable matrix.
pub fn power_iteration<T: Scalar>(
    a: &Array2<T>,
    rel_tol: T,
    max_iter: usize,
) -> Result<(T, Array1<T>)> {
    let n = a.nrows();
    if n == 1 {
        return Ok((a[[0, 0]], Array1::ones(1)));
    }
    let mut v = Array1::<T>::from_iter((0..n).map(|i| T::one() + lit::<T>(1e-3) * count::<T>(i)));
    normalize(&mut v);
    let mut lambda = T::zero();
    for _ in 0..max_iter {
        let mut w = a.dot(&v);
        let new_lambda = v.dot(&w);
        let denom = normalize(&mut w);
        if denom == T::zero() {
            // Matrix annihilated the iterate (all-zero operator).
            return Ok((T::zero(), v));
        }
        let delta = (new_lambda - lambda).abs();
        v = w;
        lambda = new_lambda;
        if delta <= rel_tol * lambda.abs().max(T::min_positive_value()) {
            return Ok((lambda, v));
        }
    }
    Err(Error::NonConvergence(format!(
        "power iteration exceeded {max_iter} iterations on {n}x{n} matrix"
    )))
}

fn normalize<T: Scalar>(v: &mut Array1<T>) -> T {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm > T::zero() {
        v.mapv_inplace(|x| x / norm);
    }
    norm
}

/// Smallest eigenvalue of a symmetric positive-definite matrix via inverse
/// power iteration on a Cholesky solve.
pub fn smallest_eigenvalue<T: Scalar>(a: &Array2<T>, iters: usize) -> Result<T> {
    let n = a.nrows();
    let l = cholesky_psd(a)?;
    let mut v = Array1::<T>::from_iter((0..n).map(|i| T::one() + lit::<T>(1e-3) * count::<T>(i)));
    normalize(&mut v);
    let mut mu = T::zero();
    for _ in 0..iters {
        let w = cholesky_solve(&l, &v);
        let norm = w.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm == T::zero() {
            return Ok(T::zero());
        }
        mu = v.dot(&w);
        v = w.mapv(|x| x / norm);
    }
    Ok(mu.recip())
}
