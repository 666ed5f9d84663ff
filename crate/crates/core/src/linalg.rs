//! Small complex linear-algebra helpers shared by the solvers.
//!
//! Everything is column-major: `vec(A)` stacks the columns of `A`, which is
//! also nalgebra's storage order, so `vec`/`unvec` are plain reshapes.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Column-major vectorization.
pub fn vec_of(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &CVec, rows: usize, cols: usize) -> CMat {
    assert_eq!(v.len(), rows * cols, "unvec: length mismatch");
    CMat::from_column_slice(rows, cols, v.as_slice())
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn kron_real(a: &RMat, b: &RMat) -> RMat {
    a.kronecker(b)
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(cr)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Diagonal matrix from a vector.
pub fn diag_from(v: &CVec) -> CMat {
    CMat::from_diagonal(v)
}

/// `A ⊙ I`: keep only the main diagonal.
pub fn diag_part(m: &CMat) -> CMat {
    CMat::from_diagonal(&m.diagonal())
}

pub fn frob(m: &CMat) -> f64 {
    m.norm()
}

pub fn frob_sq(m: &CMat) -> f64 {
    m.norm_squared()
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_frob(a: &CMat, b: &CMat) -> f64 {
    let denom = frob(b).max(1e-300);
    frob(&(a - b)) / denom
}

/// `‖A − Aᴴ‖_F / ‖A‖_F`, zero for the zero matrix.
pub fn hermitian_deviation(m: &CMat) -> f64 {
    let n = frob(m);
    if n == 0.0 {
        return 0.0;
    }
    frob(&(m - m.adjoint())) / n
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn all_finite_vec(v: &CVec) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Solve `A x = b` for a general square complex `A` via LU with partial
/// pivoting. Fails if the factorization is numerically singular.
pub fn solve(a: &CMat, b: &CVec) -> Result<CVec> {
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Singular("LU solve".into()))?;
    if !all_finite_vec(&x) {
        return Err(Error::Singular("LU solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Solve `A x = b` for Hermitian positive definite `A`.
pub fn solve_hpd(a: &CMat, b: &CVec) -> Result<CVec> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Cholesky factorization".into()))?;
    Ok(chol.solve(b))
}

/// Smallest eigenvalue of a Hermitian matrix (the Hermitian part is used).
pub fn min_eig_hermitian(m: &CMat) -> f64 {
    let h = hermitian_part(m);
    let eig = h.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn max_eig_hermitian(m: &CMat) -> f64 {
    let h = hermitian_part(m);
    let eig = h.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Element-wise squared magnitude as a real matrix.
pub fn abs_sq(m: &CMat) -> RMat {
    m.map(|z| z.norm_sqr())
}

/// `Re{aᴴ b}`.
pub fn re_inner(a: &CVec, b: &CVec) -> f64 {
    a.dotc(b).re
}
