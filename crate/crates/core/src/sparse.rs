//! Compressed sparse row matrices, banded Cholesky and a shift-invert
//! subspace eigensolver for sparse symmetric precision matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Square or rectangular CSR matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, T)>) -> Self {
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<T> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (idx, val) = self.row(r);
        idx.binary_search(&c).map(|p| val[p]).unwrap_or_else(|_| T::zero())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (idx, val) = self.row(r);
            idx.iter().zip(val).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// `alpha * self + beta * I`.
    pub fn scale_add_identity(&self, alpha: T, beta: T) -> Self {
        let mut trip: Vec<_> = self.triplets().map(|(r, c, v)| (r, c, alpha * v)).collect();
        trip.extend((0..self.nrows.min(self.ncols)).map(|i| (i, i, beta)));
        Self::from_triplets(self.nrows, self.ncols, trip)
    }

    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, out) in y.iter_mut().enumerate() {
            let (idx, val) = self.row(r);
            let mut acc = T::zero();
            for (&c, &v) in idx.iter().zip(val) {
                acc += v * x[c];
            }
            *out = acc;
        }
    }

    /// `self * m` for a dense right-hand side.
    pub fn mul_dense(&self, m: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(m.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, m.ncols());
        for k in 0..m.ncols() {
            let x = m.column(k);
            let mut y = out.column_mut(k);
            for r in 0..self.nrows {
                let (idx, val) = self.row(r);
                let mut acc = T::zero();
                for (&c, &v) in idx.iter().zip(val) {
                    acc += v * x[c];
                }
                y[r] = acc;
            }
        }
        out
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix<T>) -> CsrMatrix<T> {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![T::zero(); other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut touched = Vec::new();
        for r in 0..self.nrows {
            touched.clear();
            let (ia, va) = self.row(r);
            for (&k, &a) in ia.iter().zip(va) {
                let (ib, vb) = other.row(k);
                for (&c, &b) in ib.iter().zip(vb) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = T::zero();
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                indices.push(c);
                values.push(acc[c]);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().fold(T::zero(), |a, &v| a + v))
            .collect()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.triplets().map(|(r, c, _)| r.abs_diff(c)).max().unwrap_or(0)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.nrows == self.ncols && self.triplets().all(|(r, c, v)| (self.get(c, r) - v).abs() <= tol)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().fold(T::zero(), |a, &v| a + v.abs()))
            .fold(T::zero(), |a, b| a.max(b))
    }
}

/// Cholesky factor of a symmetric positive-definite banded matrix.
///
/// Row `i` stores `L[i, i-b..=i]` in `band[i*(b+1)..]`, left-padded for the
/// first rows.
#[derive(Debug, Clone)]
pub struct BandedCholesky<T> {
    n: usize,
    bw: usize,
    band: Vec<T>,
}

impl<T: Scalar> BandedCholesky<T> {
    /// Factors `a + shift * I`.
    pub fn factor(a: &CsrMatrix<T>, shift: T) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::domain("banded cholesky needs a square matrix"));
        }
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![T::zero(); n * w];
        for (r, c, v) in a.triplets() {
            if c <= r {
                band[r * w + (c + bw - r)] = v;
            }
        }
        for i in 0..n {
            band[i * w + bw] += shift;
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // L[i,j] = (A[i,j] - sum_k L[i,k] L[j,k]) / L[j,j]
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                for k in klo..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > T::zero()) {
                        return Err(Error::numerical(format!(
                            "banded cholesky: non-positive pivot {s:e} at row {i}"
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                s -= self.band[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }
}

/// Options for [`smallest_eigenpairs`].
#[derive(Debug, Clone, Copy)]
pub struct SubspaceOptions {
    pub oversample: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        SubspaceOptions {
            oversample: 12,
            max_iter: 500,
            tol: 1e-10,
            seed: 0x5eed,
        }
    }
}

/// The `count` smallest eigenpairs of a sparse SPD matrix by shift-invert
/// block subspace iteration with Rayleigh-Ritz.
///
/// Returns eigenvalues ascending and the matching orthonormal eigenvectors
/// as columns.
pub fn smallest_eigenpairs<T: Scalar>(
    a: &CsrMatrix<T>,
    count: usize,
    opts: SubspaceOptions,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let n = a.nrows();
    if count == 0 || count > n {
        return Err(Error::domain(format!("requested {count} eigenpairs of a {n}x{n} matrix")));
    }
    let p = (count + opts.oversample).min(n);
    let norm = a.norm_inf();
    // Tiny positive shift keeps the factorization definite for singular PSD input.
    let shift = norm * T::lit(1e-10);
    let fac = BandedCholesky::factor(a, shift)?;

    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut q = DMatrix::<T>::from_fn(n, p, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    });
    q = q.qr().q();

    let tol = T::lit(opts.tol) * norm.max(T::one());
    for _ in 0..opts.max_iter {
        let mut z = q.clone();
        for k in 0..p {
            let mut col: Vec<T> = z.column(k).iter().copied().collect();
            fac.solve_in_place(&mut col);
            z.column_mut(k).copy_from_slice(&col);
        }
        q = z.qr().q();
        let aq = a.mul_dense(&q);
        let mut h = q.transpose() * &aq;
        crate::linalg::symmetrize(&mut h);
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).expect("finite"));
        let v = eig.eigenvectors.select_columns(&order);
        let theta = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
        q = &q * &v;
        let aq = aq * &v;
        let converged = (0..count).all(|k| {
            let r = aq.column(k) - q.column(k) * theta[k];
            r.norm() <= tol
        });
        if converged {
            let vals = theta.rows(0, count).into_owned();
            let vecs = q.columns(0, count).into_owned();
            return Ok((vals, vecs));
        }
    }
    Err(Error::numerical(format!(
        "subspace iteration did not converge to {count} eigenpairs within {} iterations",
        opts.max_iter
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            let mut deg = 0.0;
            if i > 0 {
                t.push((i, i - 1, -1.0));
                deg += 1.0;
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                deg += 1.0;
            }
            t.push((i, i, deg));
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = path_laplacian(6).scale_add_identity(0.7, 0.3);
        let prod = a.matmul(&a).to_dense();
        let d = a.to_dense();
        assert!((prod - &d * &d).amax() < 1e-14);
    }

    #[test]
    fn banded_solve_matches_dense() {
        let a = path_laplacian(9).matmul(&path_laplacian(9)).scale_add_identity(1.0, 0.5);
        let fac = BandedCholesky::factor(&a, 0.0).unwrap();
        assert_eq!(fac.bandwidth(), 2);
        let b: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        fac.solve_in_place(&mut x);
        let mut ax = vec![0.0; 9];
        a.mul_vec(&x, &mut ax);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn subspace_matches_dense_eigen() {
        let a = path_laplacian(40).scale_add_identity(1.0, 0.01);
        let (vals, vecs) = smallest_eigenpairs(&a, 5, SubspaceOptions::default()).unwrap();
        let dense = SymmetricEigen::new(a.to_dense());
        let mut ev: Vec<f64> = dense.eigenvalues.iter().copied().collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for k in 0..5 {
            assert!((vals[k] - ev[k]).abs() < 1e-9, "{k}: {} vs {}", vals[k], ev[k]);
            let r = a.mul_dense(&vecs.columns(k, 1).into_owned()) - vecs.column(k) * vals[k];
            assert!(r.norm() < 1e-8);
        }
        let gram = vecs.transpose() * &vecs;
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-10);
    }
}
