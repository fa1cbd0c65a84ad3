//! Dense complex linear-algebra helpers shared by the other modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

/// `exp(j * phase)`.
#[inline]
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

pub fn diag(entries: &[Complex64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_column_slice(entries))
}

/// Largest entry-wise modulus of `a - b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff_vec(a: &CVector, b: &CVector) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// `max |A^H A - I|`, the unitarity defect of a square matrix.
pub fn unitarity_defect(a: &CMatrix) -> f64 {
    let gram = a.adjoint() * a;
    max_abs_diff(&gram, &CMatrix::identity(a.nrows(), a.ncols()))
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hpd_inverse(a: &CMatrix) -> Result<CMatrix> {
    a.clone().cholesky().map(|c| c.inverse()).ok_or(Error::Singular)
}

/// Solve `A x = b` for a general square matrix via LU.
pub fn solve(a: &CMatrix, b: &CVector) -> Result<CVector> {
    a.clone().lu().solve(b).ok_or(Error::Singular)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_phase(phase: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = phase.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2π for tiny negative inputs
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}
