//! Small dense linear-algebra helpers used by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Reciprocal-condition cutoff below which a normal matrix is treated as singular.
pub const RCOND_CUTOFF: f64 = 1e-12;

/// Column-major vectorization, `vec(M)`.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

/// Column indices `l` with `|row - l| <= bandwidth`, optionally skipping `l == row`.
pub fn band_support(row: usize, dim: usize, bandwidth: usize, skip_diagonal: bool) -> Vec<usize> {
    let lo = row.saturating_sub(bandwidth);
    let hi = (row + bandwidth).min(dim.saturating_sub(1));
    (lo..=hi).filter(|&l| !(skip_diagonal && l == row)).collect()
}

/// True when every entry outside the band (and the diagonal, if requested) is exactly zero.
pub fn is_banded(m: &DMatrix<f64>, bandwidth: usize, zero_diagonal: bool) -> bool {
    for (idx, v) in m.iter().enumerate() {
        let (i, j) = (idx % m.nrows(), idx / m.nrows());
        let off_band = i.abs_diff(j) > bandwidth || (zero_diagonal && i == j);
        if off_band && *v != 0.0 {
            return false;
        }
    }
    true
}

/// Zero every entry outside the band (and the diagonal, if requested).
pub fn project_band(m: &mut DMatrix<f64>, bandwidth: usize, zero_diagonal: bool) {
    let n = m.nrows();
    for j in 0..m.ncols() {
        for i in 0..n {
            if i.abs_diff(j) > bandwidth || (zero_diagonal && i == j) {
                m[(i, j)] = 0.0;
            }
        }
    }
}

/// Reciprocal condition number of a symmetric positive semi-definite matrix.
///
/// Exact (eigenvalue ratio) for small matrices; for larger ones the squared
/// ratio of Cholesky pivots is used as a cheap estimate.
pub fn rcond_spd(gram: &DMatrix<f64>) -> f64 {
    let n = gram.nrows();
    if n == 0 {
        return 1.0;
    }
    if n <= 32 {
        let eig = gram.clone().symmetric_eigenvalues();
        let max = eig.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if max == 0.0 || !max.is_finite() {
            return 0.0;
        }
        return (min / max).max(0.0);
    }
    match Cholesky::new(gram.clone()) {
        Some(ch) => pivot_rcond(ch.l_dirty()),
        None => 0.0,
    }
}

fn pivot_rcond(l: &DMatrix<f64>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if hi == 0.0 {
        0.0
    } else {
        (lo / hi).powi(2)
    }
}

/// Solve the normal equations `gram * x = rhs`, failing when `gram` is too badly conditioned.
pub fn solve_normal(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    context: &'static str,
    index: usize,
) -> Result<DVector<f64>> {
    if gram.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let rcond = rcond_spd(gram);
    if !(rcond >= RCOND_CUTOFF) {
        return Err(Error::RankDeficient {
            context,
            index,
            rcond,
        });
    }
    let ch = Cholesky::new(gram.clone()).ok_or(Error::RankDeficient {
        context,
        index,
        rcond,
    })?;
    Ok(ch.solve(rhs))
}

/// Ordinary least squares `argmin ||y - X b||` through the normal equations.
pub fn least_squares(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    context: &'static str,
    index: usize,
) -> Result<DVector<f64>> {
    let gram = design.tr_mul(design);
    let rhs = design.tr_mul(response);
    solve_normal(&gram, &rhs, context, index)
}

/// Minimum-norm least-squares solution through the pseudo-inverse of the normal matrix.
///
/// Eigenvalues below `RCOND_CUTOFF * max` are discarded.
pub fn pinv_solve_normal(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let n = gram.nrows();
    if n == 0 {
        return DVector::zeros(0);
    }
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let mut out = DVector::zeros(n);
    if max == 0.0 {
        return out;
    }
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > RCOND_CUTOFF * max {
            let v = eig.eigenvectors.column(k);
            let w = v.dot(rhs) / lambda;
            out.axpy(w, &v, 1.0);
        }
    }
    out
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |a, z| a.max(z.norm()))
}

/// 2-norm condition number `||M|| ||M^{-1}||`, each norm from the top eigenvalue of a
/// symmetric product (the dense SVD is unreliable on rank-deficient input).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let Some(inv) = m.clone().try_inverse() else {
        return f64::INFINITY;
    };
    let top = |x: &DMatrix<f64>| {
        (x.transpose() * x)
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0_f64, |a, &b| a.max(b))
            .sqrt()
    };
    let c = top(m) * top(&inv);
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}
