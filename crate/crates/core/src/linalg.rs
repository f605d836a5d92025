//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// Relative threshold below which a column remainder counts as linearly
/// dependent during orthonormalization.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormalize the columns of `cols` by modified Gram-Schmidt with one
/// reorthogonalization pass. Dependent columns are dropped; the second
/// element of the return value counts how many were dropped.
pub fn orthonormalize(cols: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = cols.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(cols.ncols());
    let mut dropped = 0usize;
    for j in 0..cols.ncols() {
        let mut v = cols.column(j).into_owned();
        let scale = v.norm().max(1.0);
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        if v.norm() <= RANK_TOL * scale {
            dropped += 1;
        } else {
            let norm = v.norm();
            basis.push(v / norm);
        }
    }
    let q = DMatrix::from_columns(&basis);
    if basis.is_empty() {
        (DMatrix::zeros(n, 0), dropped)
    } else {
        (q, dropped)
    }
}

/// Least-norm least-squares solution of `a x = b` via SVD.
pub fn least_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let cutoff = RANK_TOL * svd.singular_values.max().max(1e-300);
    svd.solve(b, cutoff)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Singular values of `a`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// Largest singular value (operator 2-norm). Zero for an all-zero matrix.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Smallest singular value above `rel_tol * sigma_max`, or `None` if the
/// matrix is (numerically) zero.
pub fn smallest_positive_singular_value(a: &DMatrix<f64>, rel_tol: f64) -> Option<f64> {
    let sv = singular_values(a);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    if sigma_max <= 0.0 {
        return None;
    }
    sv.iter().rev().find(|&&s| s > rel_tol * sigma_max).copied()
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let t = s - a;
    let err = (a - (s - t)) + (b - t);
    (s, err)
}

/// Dot product with doubled working precision (compensated products and
/// sums); the result is faithful to well below one ulp of the exact value.
pub fn dot2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let prod = x * y;
        let prod_err = x.mul_add(y, -prod);
        let (s, sum_err) = two_sum(sum, prod);
        sum = s;
        comp += prod_err + sum_err;
    }
    sum + comp
}

/// `q (q' w)` with both stages in compensated arithmetic. Used where the
/// residual of a near-invariant vector must compute to its true sub-ulp
/// size rather than to one ulp of noise.
pub fn range_projection_compensated(q: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    let r = q.ncols();
    let n = q.nrows();
    let coeffs: Vec<f64> = (0..r)
        .map(|j| dot2(q.column(j).as_slice(), w.as_slice()))
        .collect();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let row: Vec<f64> = (0..r).map(|j| q[(i, j)]).collect();
        out[i] = dot2(&row, &coeffs);
    }
    out
}

/// Checks that `m` is symmetric positive semidefinite, within a small
/// relative eigenvalue tolerance.
pub fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = 1.0 + m[(i, j)].abs().max(m[(j, i)].abs());
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return false;
            }
        }
    }
    if n == 0 {
        return true;
    }
    let eigs = m.clone().symmetric_eigenvalues();
    let lam_max = eigs.iter().fold(0.0_f64, |acc, &l| acc.max(l.abs()));
    eigs.iter().all(|&l| l >= -1e-9 * (1.0 + lam_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormalize_drops_dependent_columns() {
        let cols = DMatrix::from_columns(&[
            DVector::from_vec(vec![1.0, 1.0, 0.0]),
            DVector::from_vec(vec![2.0, 2.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0, 3.0]),
        ]);
        let (q, dropped) = orthonormalize(&cols);
        assert_eq!(dropped, 1);
        assert_eq!(q.ncols(), 2);
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn least_norm_picks_minimal_solution() {
        // x1 + x2 = 2 has least-norm solution (1, 1).
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let x = least_norm_solve(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_min_plus_skips_zeros() {
        let a = DMatrix::from_partial_diagonal(2, 2, &[3.0, 0.0]);
        let s = smallest_positive_singular_value(&a, 1e-12).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
        assert!(smallest_positive_singular_value(&DMatrix::zeros(2, 2), 1e-12).is_none());
    }

    #[test]
    fn psd_check_rejects_indefinite() {
        let good = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(is_symmetric_psd(&good));
        assert!(!is_symmetric_psd(&bad));
    }
}
