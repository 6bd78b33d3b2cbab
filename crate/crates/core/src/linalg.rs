//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adds `JITTER * trace / n` to the diagonal of a kernel matrix.
pub fn add_jitter<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    if n == 0 {
        return;
    }
    let eps = jitter_amount(m);
    for i in 0..n {
        m[(i, i)] += eps;
    }
}

/// The diagonal shift [`add_jitter`] would apply.
pub fn jitter_amount<T: Scalar>(m: &DMatrix<T>) -> T {
    let n = m.nrows().max(1);
    T::lit(T::JITTER) * m.trace().abs() / T::lit(n as f64)
}

/// Cholesky factor of a symmetric positive-definite matrix with a
/// diagnostic message on failure.
pub fn cholesky<T: Scalar>(m: DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    let n = m.nrows();
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for i in 0..n {
        let d = m[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let finite = m.iter().all(|v| v.finite());
    Cholesky::new(m).ok_or_else(|| {
        Error::numerical(format!(
            "cholesky of {what} ({n}x{n}) failed; diagonal range [{lo:e}, {hi:e}], all finite: {finite}"
        ))
    })
}

/// `log det` from a Cholesky factor.
pub fn chol_logdet<T: Scalar>(c: &Cholesky<T, Dyn>) -> T {
    let l = c.l_dirty();
    let mut acc = T::zero();
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    acc + acc
}

/// `v^T A^{-1} v` using the factor of `A`.
pub fn chol_quad<T: Scalar>(c: &Cholesky<T, Dyn>, v: &DVector<T>) -> T {
    let mut w = v.clone();
    c.l_dirty()
        .solve_lower_triangular_mut(&mut w);
    w.norm_squared()
}

/// Checks symmetry up to `tol * max(1, max|a_ij|)`.
pub fn check_symmetric<T: Scalar>(m: &DMatrix<T>, tol: f64, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::domain(format!("{what} is not square: {:?}", m.shape())));
    }
    let scale = m.amax().max(T::one());
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > T::lit(tol) * scale {
                return Err(Error::domain(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Symmetric square root `V sqrt(max(D, 0)) V^T` of a symmetric PSD matrix.
pub fn sym_sqrt<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(m.clone());
    let d = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Symmetrizes in place: `(A + A^T) / 2`.
pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in 0..i {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}
