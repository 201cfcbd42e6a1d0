//! Small 2×2 helpers shared by the filter and the detectors.

use nalgebra::{Cholesky, Matrix2, SymmetricEigen, Vector2};

use crate::{Error, Result};

/// Relative ridge added to a covariance that fails Cholesky factorization.
pub(crate) const RIDGE_SCALE: f64 = 1e-9;

pub(crate) fn symmetrize(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of `s`, retrying once with a ridge of
/// `1e-9 · trace(s) / 2` on the diagonal.
pub(crate) fn regularized_cholesky(s: &Matrix2<f64>) -> Result<Cholesky<f64, nalgebra::U2>> {
    let s = symmetrize(s);
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularMatrix);
    }
    if let Some(ch) = Cholesky::new(s) {
        return Ok(ch);
    }
    let ridge = RIDGE_SCALE * s.trace() / 2.0;
    if ridge > 0.0 {
        if let Some(ch) = Cholesky::new(s + Matrix2::identity() * ridge) {
            return Ok(ch);
        }
    }
    Err(Error::SingularMatrix)
}

pub(crate) fn regularized_inverse(s: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    Ok(symmetrize(&regularized_cholesky(s)?.inverse()))
}

/// Symmetric inverse square root via eigendecomposition.
pub(crate) fn inv_sqrt_sym(s: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    // Validates positive definiteness (with the same ridge policy).
    let ch = regularized_cholesky(s)?;
    let spd = ch.l() * ch.l().transpose();
    let eig = SymmetricEigen::new(symmetrize(&spd));
    if eig.eigenvalues.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(Error::SingularMatrix);
    }
    let d = Matrix2::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(symmetrize(&(eig.eigenvectors * d * eig.eigenvectors.transpose())))
}

/// Symmetrizes `p` and clips tiny negative eigenvalues to zero.
///
/// Eigenvalues below `-1e-9 · max(1, trace)` are reported as an indefinite
/// covariance rather than silently repaired.
pub(crate) fn psd_project(p: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let p = symmetrize(p);
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::Integration("non-finite covariance".into()));
    }
    let eig = SymmetricEigen::new(p);
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(p);
    }
    let tol = 1e-9 * p.trace().abs().max(1.0);
    if min < -tol {
        return Err(Error::IndefiniteCovariance { min_eigenvalue: min });
    }
    let d = Matrix2::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    Ok(symmetrize(&(eig.eigenvectors * d * eig.eigenvectors.transpose())))
}

#[cfg(test)]
pub(crate) fn min_eigenvalue(p: &Matrix2<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(p)).eigenvalues.min()
}

pub(crate) fn outer(a: &Vector2<f64>, b: &Vector2<f64>) -> Matrix2<f64> {
    a * b.transpose()
}
