//! Small dense least-squares solver (Householder QR), sized for the
//! handful-of-columns designs the regression tests use.

use crate::{Result, StatError};

const RANK_TOL: f64 = 1e-10;

pub(crate) struct LeastSquares {
    pub beta: Vec<f64>,
    /// (X^T X)^{-1}, row-major p x p.
    pub xtx_inv: Vec<f64>,
}

/// Solves min ||y - X b|| for row-major `x` with `n` rows and `p` columns.
pub(crate) fn least_squares(x: &[f64], n: usize, p: usize, y: &[f64]) -> Result<LeastSquares> {
    debug_assert_eq!(x.len(), n * p);
    debug_assert_eq!(y.len(), n);
    if n < p || p == 0 {
        return Err(StatError::RankDeficient);
    }
    // Column-major working copy.
    let mut a = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            a[j * n + i] = x[i * p + j];
        }
    }
    let col_norms: Vec<f64> = (0..p).map(|j| a[j * n..(j + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut qty = y.to_vec();
    let mut diag = vec![0.0; p];
    for k in 0..p {
        let col = &a[k * n + k..(k + 1) * n];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= RANK_TOL * col_norms[k].max(f64::MIN_POSITIVE) || col_norms[k] == 0.0 {
            return Err(StatError::RankDeficient);
        }
        let alpha = if a[k * n + k] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place.
        a[k * n + k] -= alpha;
        let vnorm2: f64 = a[k * n + k..(k + 1) * n].iter().map(|v| v * v).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k + 1..p {
            let dot: f64 = (k..n).map(|i| a[k * n + i] * a[j * n + i]).sum();
            let s = 2.0 * dot / vnorm2;
            for i in k..n {
                a[j * n + i] -= s * a[k * n + i];
            }
        }
        let dot: f64 = (k..n).map(|i| a[k * n + i] * qty[i]).sum();
        let s = 2.0 * dot / vnorm2;
        for i in k..n {
            qty[i] -= s * a[k * n + i];
        }
        if diag[k].abs() <= RANK_TOL * col_norms[k] {
            return Err(StatError::RankDeficient);
        }
    }
    // R is upper triangular: diagonal in `diag`, above-diagonal in a[j*n + i], i < j.
    let r = |i: usize, j: usize| if i == j { diag[i] } else { a[j * n + i] };
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s = (i + 1..p).fold(qty[i], |s, j| s - r(i, j) * beta[j]);
        beta[i] = s / r(i, i);
    }
    // R^{-1} by back substitution, then (X^T X)^{-1} = R^{-1} R^{-T}.
    let mut rinv = vec![0.0; p * p];
    for c in 0..p {
        for i in (0..=c).rev() {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for j in i + 1..=c {
                s -= r(i, j) * rinv[j * p + c];
            }
            rinv[i * p + c] = s / r(i, i);
        }
    }
    let mut xtx_inv = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            xtx_inv[i * p + j] = (i.max(j)..p).map(|k| rinv[i * p + k] * rinv[j * p + k]).sum();
        }
    }
    Ok(LeastSquares { beta, xtx_inv })
}
