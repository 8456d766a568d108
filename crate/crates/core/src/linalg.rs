//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DpdError, Result};

/// Relative eigenvalue floor below which a matrix is treated as singular.
pub const RANK_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Ascending eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Checks that a symmetric matrix is positive definite with smallest
/// eigenvalue at least `RANK_TOL` times the largest.
pub fn check_spd(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DpdError::RankDeficient {
            what,
            eigenvalue: f64::NAN,
            largest: f64::NAN,
        });
    }
    let ev = sym_eigenvalues(m);
    let smallest = ev.first().copied().unwrap_or(0.0);
    let largest = ev.last().copied().unwrap_or(0.0);
    if !(largest > 0.0) || !(smallest > RANK_TOL * largest) {
        return Err(DpdError::RankDeficient {
            what,
            eigenvalue: smallest,
            largest,
        });
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    check_spd(m, what)?;
    let sym = symmetrize(m);
    let inv = match sym.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let eig = SymmetricEigen::new(sym);
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
            &eig.eigenvectors * d * eig.eigenvectors.transpose()
        }
    };
    Ok(symmetrize(&inv))
}

/// `xᵀ A x`.
pub fn quad_form(x: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    x.dot(&(a * x))
}

/// Checks that an `r × k` matrix has full row rank via its singular values.
pub fn check_full_row_rank(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().copied().fold(0.0_f64, f64::max);
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if sv.len() < m.nrows().min(m.ncols()) || m.nrows() > m.ncols() || !(largest > 0.0) || !(smallest > RANK_TOL * largest) {
        return Err(DpdError::RankDeficient {
            what,
            eigenvalue: if smallest.is_finite() { smallest } else { 0.0 },
            largest,
        });
    }
    Ok(())
}

/// Relative Frobenius distance `‖a - b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spd_inverse_roundtrip() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = spd_inverse(&m, "m").unwrap();
        assert_relative_eq!(&m * inv, DMatrix::identity(3, 3), epsilon = 1e-13);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match spd_inverse(&m, "m") {
            Err(DpdError::RankDeficient { what, .. }) => assert_eq!(what, "m"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_rank() {
        let ok = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(check_full_row_rank(&ok, "L").is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(check_full_row_rank(&bad, "L").is_err());
    }
}
