use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive definite `a`, falling back to LU
/// when the Cholesky factorization fails.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Inverse of a symmetric positive (semi)definite matrix, symmetrized.
pub(crate) fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = match a.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => a.clone().try_inverse()?,
    };
    Some((&inv + inv.transpose()) * 0.5)
}
