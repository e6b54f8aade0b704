//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
/// Column `k` of the returned matrix is the eigenvector for eigenvalue `k`.
pub fn sorted_symmetric_eigen(matrix: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(matrix);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // Stable sort keeps the decomposition deterministic under ties.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = eig.eigenvectors.select_columns(&order);
    (values, vectors)
}

pub fn symmetrize(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    (matrix + matrix.transpose()) * 0.5
}

/// Inverse symmetric square root of a symmetric positive-definite matrix.
///
/// Fails when the smallest eigenvalue is nonpositive or the condition number
/// exceeds `max_condition`.
pub fn inv_sqrt_spd(matrix: &DMatrix<f64>, max_condition: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_symmetric_eigen(matrix);
    let largest = values[0];
    let smallest = values[values.len() - 1];
    let condition = if smallest > 0.0 {
        largest / smallest
    } else {
        f64::INFINITY
    };
    if !(smallest > 0.0) || condition > max_condition {
        return Err(Error::SingularCovariates {
            eigenvalue: smallest,
            condition,
        });
    }
    let scale = DMatrix::from_diagonal(&values.map(|v| 1.0 / v.sqrt()));
    Ok(symmetrize(&(&vectors * scale * vectors.transpose())))
}

/// Solve `A x = b` for symmetric positive-definite `A`, rejecting numerically
/// rank-deficient systems (pivot ratio below `1e-13`).
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    if !pivots_ok(chol.l_dirty()) {
        return None;
    }
    Some(chol.solve(b))
}

/// Inverse of a symmetric positive-definite matrix, with the same rank check as [`solve_spd`].
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    if !pivots_ok(chol.l_dirty()) {
        return None;
    }
    Some(chol.inverse())
}

fn pivots_ok(l: &DMatrix<f64>) -> bool {
    let diag = l.diagonal();
    let max = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    max > 0.0 && (min / max).powi(2) > 1e-13
}

/// Project a symmetric matrix onto matrices with eigenvalues at least `floor`.
pub fn clip_eigenvalues(matrix: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let (values, vectors) = sorted_symmetric_eigen(matrix);
    let clipped = DMatrix::from_diagonal(&values.map(|v| v.max(floor)));
    symmetrize(&(&vectors * clipped * vectors.transpose()))
}

/// Linear-interpolation sample quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inv_sqrt_recovers_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let h = inv_sqrt_spd(&a, 1e12).unwrap();
        let prod = &h * &a * &h;
        assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn singular_is_rejected_with_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match inv_sqrt_spd(&a, 1e12) {
            Err(Error::SingularCovariates { eigenvalue, .. }) => assert!(eigenvalue.abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn quantile_type7() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 5.0);
        assert!((quantile_sorted(&s, 0.1) - 1.4).abs() < 1e-15);
    }
}
