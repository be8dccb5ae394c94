//! Small dense linear-algebra helpers shared by the filter, solver and
//! gradient code. Everything works on `nalgebra` dynamic matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenvalue floor below which a jitter is added before inverting.
pub const JITTER: f64 = 1e-12;

/// Asymmetry above which a supplied covariance is rejected.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &Matrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Validates a supplied covariance: rejects asymmetry above [`SYMMETRY_TOL`]
/// and returns the symmetrized matrix otherwise.
pub fn checked_covariance(m: &Matrix, what: impl Into<String>) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Dimension {
            what: "covariance",
            expected: "square".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    let a = asymmetry(m);
    if a > SYMMETRY_TOL {
        return Err(Error::Asymmetric {
            what: what.into(),
            asymmetry: a,
        });
    }
    Ok(symmetrize(m))
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn jittered_cholesky(m: &Matrix) -> Option<Cholesky<f64, Dyn>> {
    let mut s = symmetrize(m);
    if min_eigenvalue(&s) < JITTER {
        for i in 0..s.nrows() {
            s[(i, i)] += JITTER;
        }
    }
    Cholesky::new(s)
}

/// Inverse of a symmetric positive-definite matrix. A jitter of
/// [`JITTER`]·I is added first when the smallest eigenvalue is below it.
pub fn spd_inverse(m: &Matrix, what: &'static str, t: usize) -> Result<Matrix> {
    let chol = jittered_cholesky(m).ok_or(Error::Singular { what, t })?;
    Ok(symmetrize(&chol.inverse()))
}

/// Natural-log determinant of a symmetric positive-definite matrix.
pub fn spd_logdet(m: &Matrix, what: &'static str, t: usize) -> Result<f64> {
    let chol = jittered_cholesky(m).ok_or(Error::Singular { what, t })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// True when the symmetric part of `m` has all eigenvalues ≥ `-tol`.
pub fn is_psd(m: &Matrix, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Symmetric square root factor `L` with `L L' = m` for a PSD matrix,
/// clamping tiny negative eigenvalues to zero. Works for singular `m`.
pub fn psd_factor(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut l = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

pub fn trace_product(a: &Matrix, b: &Matrix) -> f64 {
    // Tr(AB) without forming the product
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric_covariance() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            checked_covariance(&m, "W"),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn symmetrizes_tiny_asymmetry() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 1e-12, 0.0, 1.0]);
        let s = checked_covariance(&m, "W").unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let m = Matrix::zeros(2, 2);
        let inv = spd_inverse(&m, "zero", 0).unwrap();
        assert!((inv[(0, 0)] - 1e12).abs() / 1e12 < 1e-9);
    }

    #[test]
    fn indefinite_is_singular() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            spd_inverse(&m, "M", 3),
            Err(Error::Singular { what: "M", t: 3 })
        );
    }

    #[test]
    fn logdet_matches_product_of_eigenvalues() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let ld = spd_logdet(&m, "M", 0).unwrap();
        assert!((ld - (2.0_f64 - 0.25).ln()).abs() < 1e-14);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let m = Matrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let l = psd_factor(&m);
        assert!((&l * l.transpose() - &m).norm() < 1e-12);
    }
}
