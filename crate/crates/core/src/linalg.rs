//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative pivot threshold below which a block is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Solves `m x = rhs` with full-pivot LU, rejecting numerically singular `m`.
pub fn solve_checked(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = m.amax();
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let lu = m.clone().full_piv_lu();
    let u = lu.u();
    let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if min_pivot <= SINGULAR_RTOL * scale {
        return None;
    }
    let x = lu.solve(rhs)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Least-squares solve through the SVD pseudo-inverse. Returns the solution
/// and the residual norm `|m x - rhs|`.
pub fn solve_least_squares(m: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, f64) {
    if m.nrows() == 0 {
        return (DVector::zeros(m.ncols()), 0.0);
    }
    let svd = m.clone().svd(true, true);
    let tol = SINGULAR_RTOL * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let x = svd
        .solve(rhs, tol)
        .unwrap_or_else(|_| DVector::zeros(m.ncols()));
    let res = (m * &x - rhs).norm();
    (x, res)
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
