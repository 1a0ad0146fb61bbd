//! Small dense symmetric linear algebra for GLM and partial-likelihood fits.
//!
//! Systems here are p x p with p rarely above a dozen, so everything is
//! plain Cholesky on row-major slices. The solver drops linearly dependent
//! columns deterministically (later columns lose), which is what makes
//! rank-deficient design matrices reproducible across runs.

use crate::error::{Error, Result};
use crate::num::{cast, Scalar};

/// Relative pivot threshold below which a column is declared aliased.
const DROP_TOL: f64 = 1e-10;

/// Solution of a symmetric positive semidefinite system with deterministic
/// column dropping.
#[derive(Debug, Clone)]
pub struct SymSolve<F> {
    /// Solution vector; entries for dropped columns are zero.
    pub x: Vec<F>,
    /// Indices of columns dropped as linearly dependent on earlier ones.
    pub dropped: Vec<usize>,
}

/// Solve `a * x = b` for symmetric PSD `a` (row-major, p x p).
///
/// Pivots are taken in natural order; a column whose pivot falls below
/// `DROP_TOL` times its original diagonal is excluded from the system and
/// its solution entry set to zero.
pub fn solve_sym_dropping<F: Scalar>(a: &[F], b: &[F], p: usize) -> SymSolve<F> {
    debug_assert_eq!(a.len(), p * p);
    debug_assert_eq!(b.len(), p);

    let mut chol = vec![F::zero(); p * p];
    let mut active = vec![true; p];
    let mut dropped = Vec::new();
    let tol: F = cast(DROP_TOL);

    for k in 0..p {
        let orig = a[k * p + k];
        let mut d = orig;
        for j in 0..k {
            if active[j] {
                d = d - chol[k * p + j] * chol[k * p + j];
            }
        }
        if orig <= F::zero() || d <= tol * orig {
            active[k] = false;
            dropped.push(k);
            for j in 0..=k {
                chol[k * p + j] = F::zero();
            }
            continue;
        }
        let lkk = d.sqrt();
        chol[k * p + k] = lkk;
        for i in (k + 1)..p {
            let mut s = a[i * p + k];
            for j in 0..k {
                if active[j] {
                    s = s - chol[i * p + j] * chol[k * p + j];
                }
            }
            chol[i * p + k] = s / lkk;
        }
    }

    // Forward substitution: L y = b over active columns.
    let mut y = vec![F::zero(); p];
    for i in 0..p {
        if !active[i] {
            continue;
        }
        let mut s = b[i];
        for j in 0..i {
            if active[j] {
                s = s - chol[i * p + j] * y[j];
            }
        }
        y[i] = s / chol[i * p + i];
    }

    // Back substitution: L^T x = y.
    let mut x = vec![F::zero(); p];
    for i in (0..p).rev() {
        if !active[i] {
            continue;
        }
        let mut s = y[i];
        for j in (i + 1)..p {
            if active[j] {
                s = s - chol[j * p + i] * x[j];
            }
        }
        x[i] = s / chol[i * p + i];
    }

    SymSolve { x, dropped }
}

/// Inverse of a symmetric positive definite matrix (row-major, p x p).
///
/// Errors if any pivot is non-positive, i.e. the matrix is singular or
/// indefinite.
pub fn invert_sym<F: Scalar>(a: &[F], p: usize) -> Result<Vec<F>> {
    debug_assert_eq!(a.len(), p * p);
    let mut chol = vec![F::zero(); p * p];
    for k in 0..p {
        let mut d = a[k * p + k];
        for j in 0..k {
            d = d - chol[k * p + j] * chol[k * p + j];
        }
        if d <= F::zero() {
            return Err(Error::Numerical(format!(
                "matrix not positive definite at pivot {k}"
            )));
        }
        let lkk = d.sqrt();
        chol[k * p + k] = lkk;
        for i in (k + 1)..p {
            let mut s = a[i * p + k];
            for j in 0..k {
                s = s - chol[i * p + j] * chol[k * p + j];
            }
            chol[i * p + k] = s / lkk;
        }
    }

    // Invert by solving L L^T X = I column by column.
    let mut inv = vec![F::zero(); p * p];
    for col in 0..p {
        let mut y = vec![F::zero(); p];
        for i in 0..p {
            let mut s = if i == col { F::one() } else { F::zero() };
            for j in 0..i {
                s = s - chol[i * p + j] * y[j];
            }
            y[i] = s / chol[i * p + i];
        }
        for i in (0..p).rev() {
            let mut s = y[i];
            for j in (i + 1)..p {
                s = s - chol[j * p + i] * inv[j * p + col];
            }
            inv[i * p + col] = s / chol[i * p + i];
        }
    }
    Ok(inv)
}

/// `y = a * x` for row-major `a` (p x p).
pub fn matvec<F: Scalar>(a: &[F], x: &[F], p: usize) -> Vec<F> {
    (0..p)
        .map(|i| (0..p).map(|j| a[i * p + j] * x[j]).sum())
        .collect()
}

/// Quadratic form x^T a x for row-major symmetric `a`.
pub fn quad_form<F: Scalar>(a: &[F], x: &[F], p: usize) -> F {
    let ax = matvec(a, x, p);
    (0..p).map(|i| x[i] * ax[i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_simple_system() {
        // A = [[4,2],[2,3]], b = [2,5] -> x = [-0.5, 2]
        let a: Vec<f64> = vec![4.0, 2.0, 2.0, 3.0];
        let b = vec![2.0, 5.0];
        let s = solve_sym_dropping(&a, &b, 2);
        assert!(s.dropped.is_empty());
        assert!((s.x[0] + 0.5).abs() < 1e-12);
        assert!((s.x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn drops_later_duplicate_column() {
        // Gram matrix of X = [x, x]: perfectly collinear; second column drops.
        let a: Vec<f64> = vec![2.0, 2.0, 2.0, 2.0];
        let b = vec![4.0, 4.0];
        let s = solve_sym_dropping(&a, &b, 2);
        assert_eq!(s.dropped, vec![1]);
        assert!((s.x[0] - 2.0).abs() < 1e-12);
        assert_eq!(s.x[1], 0.0);
    }

    #[test]
    fn inverse_matches_hand_computation() {
        let a: Vec<f64> = vec![4.0, 2.0, 2.0, 3.0];
        let inv = invert_sym(&a, 2).unwrap();
        // det = 8; inverse = [[3,-2],[-2,4]]/8
        assert!((inv[0] - 3.0 / 8.0).abs() < 1e-12);
        assert!((inv[1] + 2.0 / 8.0).abs() < 1e-12);
        assert!((inv[3] - 4.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_rejects_singular() {
        let a: Vec<f64> = vec![1.0, 1.0, 1.0, 1.0];
        assert!(invert_sym(&a, 2).is_err());
    }
}
