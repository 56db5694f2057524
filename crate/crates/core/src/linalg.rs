//! Small dense helpers shared by the density kernels and the accelerators.

use nalgebra::{DMatrix, DVector};

use crate::error::{GmmError, Result};

/// Relative size of the one-shot diagonal jitter applied when a covariance
/// fails to factor.
pub const JITTER_SCALE: f64 = 1e-10;

/// Lower Cholesky factor of `cov`, retrying once with a diagonal jitter of
/// `JITTER_SCALE * max(trace/D, floor)`. Returns the covariance actually
/// factored together with its factor.
pub fn cholesky_with_jitter(cov: &DMatrix<f64>, floor: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(GmmError::NotPositiveDefinite);
    }
    let sym = symmetrize(cov);
    if let Some(l) = cholesky(&sym) {
        return Ok((sym, l));
    }
    let d = sym.nrows() as f64;
    let scale = (sym.trace() / d).max(floor);
    let jitter = JITTER_SCALE * scale;
    if !(jitter > 0.0) {
        return Err(GmmError::NotPositiveDefinite);
    }
    let mut jittered = sym;
    for i in 0..jittered.nrows() {
        jittered[(i, i)] += jitter;
    }
    match cholesky(&jittered) {
        Some(l) => Ok((jittered, l)),
        None => Err(GmmError::NotPositiveDefinite),
    }
}

/// Plain Cholesky; `None` unless every pivot is strictly positive.
pub fn cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub fn backward_solve_transpose(l: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = y.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// `Σ⁻¹ b` given the lower factor of `Σ`.
pub fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    backward_solve_transpose(l, &forward_solve(l, b))
}

/// `Σ⁻¹` given the lower factor of `Σ`.
pub fn chol_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::<f64>::zeros(n);
        e[j] = 1.0;
        inv.set_column(j, &chol_solve(l, &e));
    }
    symmetrize(&inv)
}

/// Number of entries in the lower triangle of a `d x d` matrix.
pub fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Column-stacked lower triangle.
pub fn vech(l: &DMatrix<f64>) -> Vec<f64> {
    let n = l.nrows();
    let mut out = Vec::with_capacity(tri_len(n));
    for j in 0..n {
        for i in j..n {
            out.push(l[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vech`]: rebuilds a lower-triangular matrix.
pub fn unvech(v: &[f64], d: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), tri_len(d));
    let mut l = DMatrix::<f64>::zeros(d, d);
    let mut idx = 0;
    for j in 0..d {
        for i in j..d {
            l[(i, j)] = v[idx];
            idx += 1;
        }
    }
    l
}

/// Flips the sign of every column whose diagonal entry is negative, which
/// leaves `L Lᵀ` unchanged.
pub fn canonicalize_factor(l: &mut DMatrix<f64>) {
    for j in 0..l.ncols() {
        if l[(j, j)] < 0.0 {
            for i in j..l.nrows() {
                l[(i, j)] = -l[(i, j)];
            }
        }
    }
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
