//! Structured covariance algebra for the two marginal likelihoods.
//!
//! Model II's marginal `C_t (x) I_x + K^-1 C_{x|t}` splits into the
//! orthogonal complement of `span(phi)`, where it acts as `C_t`, and `L`
//! independent `J x J` systems `A_l = C_t + K^-1 diag(lambda_{., l}^2)`.
//! Vectors of length `IJ` are stored space-fastest and reshaped to `I x J`
//! matrices, so `(A (x) B) vec(V) = vec(B V A^T)`.
//!
//! Model I's marginal has no such structure and is assembled densely.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::{DynamicEigenvalues, MercerBasis};
use crate::linalg::{chol_logdet, chol_quad, cholesky, sym_sqrt, symmetrize};
use crate::scalar::Scalar;

/// Default bound on `I * J` for the dense Model I marginal.
pub const DEFAULT_DENSE_CAP: usize = 4096;

fn as_matrix<T: Scalar>(v: &DVector<T>, rows: usize, cols: usize) -> Result<DMatrix<T>> {
    if v.len() != rows * cols {
        return Err(Error::domain(format!(
            "vector has length {}, expected {rows}*{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

fn as_vector<T: Scalar>(m: DMatrix<T>) -> DVector<T> {
    let n = m.len();
    DVector::from_vec(m.reshape_generic(Dyn(n), nalgebra::Const::<1>).data.into())
}

/// Factored Model II marginal covariance.
#[derive(Debug, Clone)]
pub struct Model2Marginal<T: Scalar> {
    phi: DMatrix<T>,
    lambda2: DMatrix<T>,
    k: usize,
    c_t: DMatrix<T>,
    ct_chol: Cholesky<T, Dyn>,
    a_chol: Vec<Cholesky<T, Dyn>>,
}

impl<T: Scalar> Model2Marginal<T> {
    /// `c_t` is used as given; callers add jitter when building it from a kernel.
    pub fn new(
        c_t: DMatrix<T>,
        basis: &MercerBasis<T>,
        dyn_eig: &DynamicEigenvalues<T>,
        k: usize,
    ) -> Result<Self> {
        Self::from_lambda2(c_t, basis.phi.clone(), dyn_eig.lambda.map(|v| v * v), k)
    }

    /// Same as [`Model2Marginal::new`] with squared eigenvalues (`J x L`) given directly.
    pub fn from_lambda2(c_t: DMatrix<T>, phi: DMatrix<T>, lambda2: DMatrix<T>, k: usize) -> Result<Self> {
        let (j, l) = lambda2.shape();
        if !c_t.is_square() || c_t.nrows() != j {
            return Err(Error::domain(format!("C_t is {:?}, expected {j}x{j}", c_t.shape())));
        }
        if phi.ncols() != l || phi.nrows() < l {
            return Err(Error::domain(format!("basis is {:?}, expected I x {l} with I >= {l}", phi.shape())));
        }
        if k == 0 {
            return Err(Error::domain("K must be >= 1"));
        }
        let ct_chol = cholesky(c_t.clone(), "C_t")?;
        let inv_k = T::one() / T::lit(k as f64);
        let mut a_chol = Vec::with_capacity(l);
        for col in 0..l {
            let mut a = c_t.clone();
            for row in 0..j {
                a[(row, row)] += lambda2[(row, col)] * inv_k;
            }
            a_chol.push(cholesky(a, "C_t + K^-1 diag(lambda^2)")?);
        }
        Ok(Model2Marginal {
            phi,
            lambda2,
            k,
            c_t,
            ct_chol,
            a_chol,
        })
    }

    pub fn n_space(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_time(&self) -> usize {
        self.c_t.nrows()
    }

    pub fn truncation(&self) -> usize {
        self.phi.ncols()
    }

    pub fn trials(&self) -> usize {
        self.k
    }

    pub fn c_t(&self) -> &DMatrix<T> {
        &self.c_t
    }

    pub fn phi(&self) -> &DMatrix<T> {
        &self.phi
    }

    pub fn lambda2(&self) -> &DMatrix<T> {
        &self.lambda2
    }

    pub fn ct_cholesky(&self) -> &Cholesky<T, Dyn> {
        &self.ct_chol
    }

    /// Splits `V` (`I x J`) into the complement part `R = V - phi B` and the
    /// coordinates `B = phi^T V` (`L x J`).
    pub fn project(&self, v: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
        let b = self.phi.tr_mul(v);
        let r = v - &self.phi * &b;
        (r, b)
    }

    /// `C*^-1 V` for `V` in matrix form.
    pub fn inverse_apply_matrix(&self, v: &DMatrix<T>) -> DMatrix<T> {
        let (r, b) = self.project(v);
        let mut rt = r.transpose();
        self.ct_chol.solve_mut(&mut rt);
        let mut out = rt.transpose();
        let mut coeff = DMatrix::zeros(self.truncation(), self.n_time());
        for (l, chol) in self.a_chol.iter().enumerate() {
            let mut bl = b.row(l).transpose();
            chol.solve_mut(&mut bl);
            coeff.set_row(l, &bl.transpose());
        }
        out.gemm(T::one(), &self.phi, &coeff, T::one());
        out
    }

    pub fn inverse_apply(&self, v: &DVector<T>) -> Result<DVector<T>> {
        let m = as_matrix(v, self.n_space(), self.n_time())?;
        Ok(as_vector(self.inverse_apply_matrix(&m)))
    }

    /// `log det C*`.
    pub fn logdet(&self) -> T {
        let rest = T::lit((self.n_space() - self.truncation()) as f64);
        let mut acc = rest * chol_logdet(&self.ct_chol);
        for c in &self.a_chol {
            acc += chol_logdet(c);
        }
        acc
    }

    /// `v^T C*^-1 v` from the projected pieces of `v`: the complement part
    /// `R` (`I x J`) and `b = phi^T V` (`L x J`).
    pub fn quad_projected(&self, r: &DMatrix<T>, b: &DMatrix<T>) -> T {
        let mut rt = r.transpose();
        self.ct_chol.l_dirty().solve_lower_triangular_mut(&mut rt);
        let mut acc = rt.norm_squared();
        for (l, chol) in self.a_chol.iter().enumerate() {
            acc += chol_quad(chol, &b.row(l).transpose());
        }
        acc
    }

    /// `v^T C*^-1 v`.
    pub fn quad(&self, v: &DVector<T>) -> Result<T> {
        let m = as_matrix(v, self.n_space(), self.n_time())?;
        let (r, b) = self.project(&m);
        Ok(self.quad_projected(&r, &b))
    }

    /// Analytic posterior of the mean field `M` given the trial mean.
    pub fn posterior(&self, ybar: &DVector<T>) -> Result<M2Posterior<T>> {
        let y = as_matrix(ybar, self.n_space(), self.n_time())?;
        let b = self.phi.tr_mul(&y);
        let (l, j) = (self.truncation(), self.n_time());
        let mut coeff = DMatrix::zeros(l, j);
        let mut s_sqrt = Vec::with_capacity(l);
        let mut s = Vec::with_capacity(l);
        for (idx, chol) in self.a_chol.iter().enumerate() {
            let mut bl = b.row(idx).transpose();
            chol.solve_mut(&mut bl);
            coeff.set_row(idx, &(&self.c_t * bl).transpose());
            let mut sl = &self.c_t - &self.c_t * chol.solve(&self.c_t);
            symmetrize(&mut sl);
            s_sqrt.push(sym_sqrt(&sl));
            s.push(sl);
        }
        // outside the span the noise vanishes, so M is observed exactly there
        let mut mean = y - &self.phi * &b;
        mean.gemm(T::one(), &self.phi, &coeff, T::one());
        Ok(M2Posterior {
            mean: as_vector(mean),
            phi: self.phi.clone(),
            n_time: j,
            s,
            s_sqrt,
        })
    }
}

/// Posterior `N(mean, C')` of the Model II mean field, with `C'` available as
/// an operator and through its symmetric square root. `C'` is supported on
/// the span of `phi`.
#[derive(Debug, Clone)]
pub struct M2Posterior<T: Scalar> {
    pub mean: DVector<T>,
    phi: DMatrix<T>,
    n_time: usize,
    s: Vec<DMatrix<T>>,
    s_sqrt: Vec<DMatrix<T>>,
}

impl<T: Scalar> M2Posterior<T> {
    fn apply_with(&self, span: &[DMatrix<T>], v: &DVector<T>) -> Result<DVector<T>> {
        let (i, j) = (self.phi.nrows(), self.n_time);
        let m = as_matrix(v, i, j)?;
        let b = self.phi.tr_mul(&m);
        let mut out = DMatrix::zeros(i, j);
        let mut coeff = DMatrix::zeros(self.phi.ncols(), j);
        for (l, op) in span.iter().enumerate() {
            coeff.set_row(l, &(b.row(l) * op));
        }
        out.gemm(T::one(), &self.phi, &coeff, T::one());
        Ok(as_vector(out))
    }

    /// `C' v`.
    pub fn cov_apply(&self, v: &DVector<T>) -> Result<DVector<T>> {
        self.apply_with(&self.s, v)
    }

    /// `C'^(1/2) v` with the symmetric square root.
    pub fn cov_sqrt_apply(&self, v: &DVector<T>) -> Result<DVector<T>> {
        self.apply_with(&self.s_sqrt, v)
    }

    /// `mean + C'^(1/2) z` for standard normal `z`.
    pub fn draw(&self, z: &DVector<T>) -> Result<DVector<T>> {
        Ok(&self.mean + self.cov_sqrt_apply(z)?)
    }
}

pub fn m2_inverse_apply<T: Scalar>(m: &Model2Marginal<T>, v: &DVector<T>) -> Result<DVector<T>> {
    m.inverse_apply(v)
}

pub fn m2_logdet<T: Scalar>(m: &Model2Marginal<T>) -> T {
    m.logdet()
}

pub fn m2_posterior_mean_cov_apply<T: Scalar>(m: &Model2Marginal<T>, ybar: &DVector<T>) -> Result<M2Posterior<T>> {
    m.posterior(ybar)
}

/// Dense Model I marginal `C_z + K^-1 sigma2_eps I`.
#[derive(Debug, Clone)]
pub struct Model1Marginal<T: Scalar> {
    pub c_t: DMatrix<T>,
    pub phi: DMatrix<T>,
    pub lambda: DMatrix<T>,
    pub sigma2_eps: T,
    pub k: usize,
    pub dense: DMatrix<T>,
}

/// `C_z` with block `(j, j') = C_t[j, j'] G_j G_j'^T`, `G_j = phi diag(lambda_j)`.
pub fn model1_prior_cov<T: Scalar>(c_t: &DMatrix<T>, phi: &DMatrix<T>, lambda: &DMatrix<T>) -> DMatrix<T> {
    let (i, j) = (phi.nrows(), lambda.nrows());
    let g: Vec<DMatrix<T>> = (0..j)
        .map(|jj| {
            let mut gj = phi.clone();
            for (mut col, &s) in gj.column_iter_mut().zip(lambda.row(jj).iter()) {
                col *= s;
            }
            gj
        })
        .collect();
    let mut out = DMatrix::zeros(i * j, i * j);
    for a in 0..j {
        for b in 0..=a {
            let block = &g[a] * g[b].transpose() * c_t[(a, b)];
            out.view_mut((a * i, b * i), (i, i)).copy_from(&block);
            if a != b {
                out.view_mut((b * i, a * i), (i, i)).copy_from(&block.transpose());
            }
        }
    }
    out
}

/// Assembles the dense Model I marginal; `cap` bounds `I * J`.
pub fn m1_assemble<T: Scalar>(
    c_t: &DMatrix<T>,
    basis: &MercerBasis<T>,
    dyn_eig: &DynamicEigenvalues<T>,
    sigma2_eps: T,
    k: usize,
    cap: usize,
) -> Result<Model1Marginal<T>> {
    let (i, j) = (basis.n_space(), dyn_eig.n_time());
    if i * j > cap {
        return Err(Error::Capacity {
            what: "dense model I marginal (I*J)",
            size: i * j,
            cap,
        });
    }
    if c_t.shape() != (j, j) || basis.truncation() != dyn_eig.truncation() {
        return Err(Error::domain("model I dimensions disagree"));
    }
    if k == 0 || !(sigma2_eps > T::zero()) {
        return Err(Error::domain("model I needs K >= 1 and sigma2_eps > 0"));
    }
    let mut dense = model1_prior_cov(c_t, &basis.phi, &dyn_eig.lambda);
    let nug = sigma2_eps / T::lit(k as f64);
    for d in 0..i * j {
        dense[(d, d)] += nug;
    }
    Ok(Model1Marginal {
        c_t: c_t.clone(),
        phi: basis.phi.clone(),
        lambda: dyn_eig.lambda.clone(),
        sigma2_eps,
        k,
        dense,
    })
}

/// Cholesky factor of a [`Model1Marginal`] and its log-determinant.
#[derive(Debug, Clone)]
pub struct Model1Factor<T: Scalar> {
    pub chol: Cholesky<T, Dyn>,
    pub logdet: T,
}

impl<T: Scalar> Model1Marginal<T> {
    pub fn n_space(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_time(&self) -> usize {
        self.c_t.nrows()
    }

    /// The noise-free part `C_z`.
    pub fn prior_cov(&self) -> DMatrix<T> {
        let mut c = self.dense.clone();
        let nug = self.sigma2_eps / T::lit(self.k as f64);
        for d in 0..c.nrows() {
            c[(d, d)] -= nug;
        }
        c
    }

    pub fn factor(&self) -> Result<Model1Factor<T>> {
        let chol = cholesky(self.dense.clone(), "model I marginal")?;
        let logdet = chol_logdet(&chol);
        Ok(Model1Factor { chol, logdet })
    }

    /// Posterior mean and covariance of the mean field `M`.
    pub fn posterior(&self, f: &Model1Factor<T>, ybar: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
        if ybar.len() != self.dense.nrows() {
            return Err(Error::domain("ybar length does not match I*J"));
        }
        let cz = self.prior_cov();
        let mean = &cz * f.chol.solve(ybar);
        let mut cov = &cz - &cz * f.chol.solve(&cz);
        symmetrize(&mut cov);
        Ok((mean, cov))
    }
}

pub fn m1_solve_logdet<T: Scalar>(m: &Model1Marginal<T>, v: &DVector<T>) -> Result<(DVector<T>, T)> {
    if v.len() != m.dense.nrows() {
        return Err(Error::domain("vector length does not match I*J"));
    }
    let f = m.factor()?;
    Ok((f.chol.solve(v), f.logdet))
}
