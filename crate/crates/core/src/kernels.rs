//! Covariance kernels: stationary exponential kernels, the Mercer eigenbasis,
//! time-varying (dynamic) eigenvalues, and the graph-Laplacian spatial
//! precision used on image grids.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::check_symmetric;
use crate::scalar::Scalar;
use crate::sparse::{smallest_eigenpairs, CsrMatrix, SubspaceOptions};
use crate::stdata::{SpaceGrid, TimeGrid};

/// Anything that can be viewed as a list of points in `R^d`.
pub trait PointSet<T> {
    fn n_points(&self) -> usize;
    fn point_dim(&self) -> usize;
    fn coords(&self, i: usize) -> &[T];
}

impl<T: Scalar> PointSet<T> for SpaceGrid<T> {
    fn n_points(&self) -> usize {
        self.len()
    }
    fn point_dim(&self) -> usize {
        self.dim()
    }
    fn coords(&self, i: usize) -> &[T] {
        self.point(i)
    }
}

impl<T: Scalar> PointSet<T> for TimeGrid<T> {
    fn n_points(&self) -> usize {
        self.len()
    }
    fn point_dim(&self) -> usize {
        1
    }
    fn coords(&self, i: usize) -> &[T] {
        std::slice::from_ref(&self.times()[i])
    }
}

impl<T: Scalar> PointSet<T> for [T] {
    fn n_points(&self) -> usize {
        self.len()
    }
    fn point_dim(&self) -> usize {
        1
    }
    fn coords(&self, i: usize) -> &[T] {
        std::slice::from_ref(&self[i])
    }
}

/// `sigma2 * exp(-0.5 |a - b|^s / rho^s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryKernelParams<T> {
    pub sigma2: T,
    pub rho: T,
    pub s_exp: T,
}

impl<T: Scalar> StationaryKernelParams<T> {
    /// Squared-exponential form (`s = 2`).
    pub fn new(sigma2: T, rho: T) -> Result<Self> {
        Self::with_exponent(sigma2, rho, T::lit(2.0))
    }

    pub fn with_exponent(sigma2: T, rho: T, s_exp: T) -> Result<Self> {
        let ok = sigma2 > T::zero() && rho > T::zero() && s_exp > T::zero() && s_exp <= T::lit(2.0);
        if !ok || !sigma2.finite() || !rho.finite() {
            return Err(Error::domain(format!(
                "kernel parameters need sigma2 > 0, rho > 0, 0 < s <= 2 (got {sigma2}, {rho}, {s_exp})"
            )));
        }
        Ok(StationaryKernelParams { sigma2, rho, s_exp })
    }

    /// Kernel value at Euclidean distance `dist`.
    pub fn eval_dist(&self, dist: T) -> T {
        let r = dist / self.rho;
        let e = if self.s_exp == T::lit(2.0) { r * r } else { r.powf(self.s_exp) };
        self.sigma2 * (-T::lit(0.5) * e).exp()
    }

    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        self.eval_dist(euclidean(a, b))
    }
}

pub fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

fn check_finite<T: Scalar, P: PointSet<T> + ?Sized>(p: &P) -> Result<()> {
    for i in 0..p.n_points() {
        if p.coords(i).iter().any(|c| !c.finite()) {
            return Err(Error::domain(format!("point {i} has non-finite coordinates")));
        }
    }
    Ok(())
}

/// Kernel matrix of `points` with itself.
pub fn stationary_kernel<T: Scalar, P: PointSet<T> + ?Sized>(
    points: &P,
    params: &StationaryKernelParams<T>,
) -> Result<DMatrix<T>> {
    check_finite(points)?;
    let n = points.n_points();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        m[(a, a)] = params.sigma2;
        for b in 0..a {
            let v = params.eval(points.coords(a), points.coords(b));
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    Ok(m)
}

/// Cross-kernel matrix between two point sets (`|a| x |b|`).
pub fn stationary_cross_kernel<T: Scalar, A: PointSet<T> + ?Sized, B: PointSet<T> + ?Sized>(
    a: &A,
    b: &B,
    params: &StationaryKernelParams<T>,
) -> Result<DMatrix<T>> {
    check_finite(a)?;
    check_finite(b)?;
    if a.point_dim() != b.point_dim() {
        return Err(Error::domain("point sets have different dimensions"));
    }
    Ok(DMatrix::from_fn(a.n_points(), b.n_points(), |i, j| {
        params.eval(a.coords(i), b.coords(j))
    }))
}

/// Truncated orthonormal eigenbasis of a spatial kernel matrix.
///
/// `phi` holds the top-`L` unit eigenvectors as columns; `lambda0[l]` is the
/// square root of the matching eigenvalue, so `C ~ phi diag(lambda0^2) phi^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MercerBasis<T: Scalar> {
    pub phi: DMatrix<T>,
    pub lambda0: DVector<T>,
}

impl<T: Scalar> MercerBasis<T> {
    pub fn n_space(&self) -> usize {
        self.phi.nrows()
    }

    pub fn truncation(&self) -> usize {
        self.phi.ncols()
    }

    /// `phi diag(lambda0^2) phi^T`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let scaled = scale_columns(&self.phi, &self.lambda0.map(|v| v * v));
        scaled * self.phi.transpose()
    }
}

/// Multiplies column `l` of `m` by `w[l]`.
pub fn scale_columns<T: Scalar>(m: &DMatrix<T>, w: &DVector<T>) -> DMatrix<T> {
    let mut out = m.clone();
    for (mut col, &s) in out.column_iter_mut().zip(w.iter()) {
        col *= s;
    }
    out
}

/// Flips each column so its largest-magnitude entry is positive; ties go to
/// the lowest index.
pub fn fix_signs<T: Scalar>(phi: &mut DMatrix<T>) {
    for mut col in phi.column_iter_mut() {
        let amax = col.amax();
        let tie = amax * T::lit(1e-10);
        let pivot = col
            .iter()
            .position(|v| v.abs() >= amax - tie)
            .expect("non-empty column");
        if col[pivot] < T::zero() {
            col.neg_mut();
        }
    }
}

/// Top-`l` eigenpairs of a symmetric PSD kernel matrix.
pub fn mercer_basis<T: Scalar>(c: &DMatrix<T>, l: usize) -> Result<MercerBasis<T>> {
    check_symmetric(c, 1e-10, "spatial kernel")?;
    let n = c.nrows();
    if l == 0 || l > n {
        return Err(Error::domain(format!("truncation L={l} must lie in 1..={n}")));
    }
    let eig = SymmetricEigen::new(c.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    order.truncate(l);
    let mut phi = eig.eigenvectors.select_columns(&order);
    fix_signs(&mut phi);
    let lambda0 = DVector::from_iterator(l, order.iter().map(|&k| eig.eigenvalues[k].max(T::zero()).sqrt()));
    Ok(MercerBasis { phi, lambda0 })
}

/// Decay weights `gamma_l = l^(-kappa/2)`, `l = 1..=L`.
pub fn decay_weights<T: Scalar>(kappa: T, l: usize) -> DVector<T> {
    DVector::from_fn(l, |k, _| T::lit((k + 1) as f64).powf(-kappa / T::lit(2.0)))
}

/// Time-varying eigenvalues `lambda[j, l] = gamma[l] * u[j, l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicEigenvalues<T: Scalar> {
    pub gamma: DVector<T>,
    pub u: DMatrix<T>,
    pub lambda: DMatrix<T>,
}

impl<T: Scalar> DynamicEigenvalues<T> {
    pub fn n_time(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn truncation(&self) -> usize {
        self.lambda.ncols()
    }

    /// Row `j` of `lambda`, squared elementwise.
    pub fn lambda2_row(&self, j: usize) -> DVector<T> {
        DVector::from_iterator(self.truncation(), self.lambda.row(j).iter().map(|&v| v * v))
    }
}

pub fn dynamic_eigenvalues<T: Scalar>(kappa: T, l: usize, u: DMatrix<T>) -> Result<DynamicEigenvalues<T>> {
    if l == 0 || u.ncols() != l {
        return Err(Error::domain(format!("U has {} columns, expected L={l} >= 1", u.ncols())));
    }
    if u.iter().any(|v| !v.finite()) {
        return Err(Error::domain("U must be finite"));
    }
    let gamma = decay_weights(kappa, l);
    let lambda = scale_columns(&u, &gamma);
    Ok(DynamicEigenvalues { gamma, u, lambda })
}

/// Time-`j` spatial kernel `phi diag(lambda_j^2) phi^T`.
pub fn assemble_cxt<T: Scalar>(
    basis: &MercerBasis<T>,
    dyn_eig: &DynamicEigenvalues<T>,
    j: usize,
) -> Result<DMatrix<T>> {
    if basis.truncation() != dyn_eig.truncation() {
        return Err(Error::domain("basis and dynamic eigenvalues disagree on L"));
    }
    if j >= dyn_eig.n_time() {
        return Err(Error::domain(format!("time index {j} out of range 0..{}", dyn_eig.n_time())));
    }
    let scaled = scale_columns(&basis.phi, &dyn_eig.lambda2_row(j));
    Ok(scaled * basis.phi.transpose())
}

/// Unit-weight graph Laplacian `D - A` of a 2-d lattice whose nodes connect
/// to every node within Chebyshev distance `window`.
#[derive(Debug, Clone)]
pub struct GraphLaplacian<T: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub window: usize,
    pub matrix: CsrMatrix<T>,
    /// `nnz / n^2`.
    pub density: f64,
}

impl<T: Scalar> GraphLaplacian<T> {
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    /// Node degrees (the Laplacian diagonal).
    pub fn degrees(&self) -> Vec<T> {
        (0..self.n()).map(|i| self.matrix.get(i, i)).collect()
    }
}

/// Builds the lattice Laplacian; nodes are numbered row-major (`r * cols + c`).
pub fn grid_graph_laplacian<T: Scalar>(rows: usize, cols: usize, window: usize) -> Result<GraphLaplacian<T>> {
    if rows < 2 || cols < 2 || window < 1 {
        return Err(Error::domain("grid needs rows, cols >= 2 and window >= 1"));
    }
    let n = rows * cols;
    let w = window as isize;
    let mut trip = Vec::with_capacity(n * (2 * window + 1).pow(2));
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let me = (r * cols as isize + c) as usize;
            let mut deg = 0usize;
            for dr in -w..=w {
                for dc in -w..=w {
                    let (rr, cc) = (r + dr, c + dc);
                    if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                        continue;
                    }
                    trip.push((me, (rr * cols as isize + cc) as usize, -T::one()));
                    deg += 1;
                }
            }
            trip.push((me, me, T::lit(deg as f64)));
        }
    }
    let matrix = CsrMatrix::from_triplets(n, n, trip);
    let density = matrix.nnz() as f64 / (n as f64 * n as f64);
    Ok(GraphLaplacian {
        rows,
        cols,
        window,
        matrix,
        density,
    })
}

/// Laplacian scaling `s_n = 1 / (n^(1 - 2/d) log^(1 + 2/d) n)`.
pub fn graph_scale(n: usize, d: usize) -> f64 {
    let (n, d) = (n as f64, d as f64);
    1.0 / (n.powf(1.0 - 2.0 / d) * n.ln().powf(1.0 + 2.0 / d))
}

/// Largest precision power accepted by [`graph_laplacian_precision`].
pub const MAX_PRECISION_POWER: u32 = 3;

/// Sparse precision `(s_n L + tau2 I)^s` of the graph-Laplacian kernel.
///
/// The covariance `(s_n L + tau2 I)^(-s)` itself is never formed.
pub fn graph_laplacian_precision<T: Scalar>(
    lg: &GraphLaplacian<T>,
    tau2: T,
    s: u32,
    d: usize,
) -> Result<CsrMatrix<T>> {
    if !(tau2 >= T::zero()) || !tau2.finite() {
        return Err(Error::domain("tau2 must be finite and non-negative"));
    }
    if s == 0 || s > MAX_PRECISION_POWER {
        return Err(Error::domain(format!(
            "precision power s={s} outside 1..={MAX_PRECISION_POWER}"
        )));
    }
    if d == 0 {
        return Err(Error::domain("spatial dimension must be >= 1"));
    }
    let sn = T::lit(graph_scale(lg.n(), d));
    let base = lg.matrix.scale_add_identity(sn, tau2);
    let mut out = base.clone();
    for _ in 1..s {
        out = out.matmul(&base);
    }
    Ok(out)
}

/// Top-`l` Mercer basis of the graph-Laplacian covariance, from the `l`
/// smallest eigenpairs of its sparse precision.
pub fn graph_mercer_basis<T: Scalar>(
    precision: &CsrMatrix<T>,
    l: usize,
    opts: SubspaceOptions,
) -> Result<MercerBasis<T>> {
    let (theta, mut phi) = smallest_eigenpairs(precision, l, opts)?;
    fix_signs(&mut phi);
    let lambda0 = theta.map(|v| {
        if v > T::zero() {
            T::one() / v.sqrt()
        } else {
            T::infinity()
        }
    });
    Ok(MercerBasis { phi, lambda0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_diagonal_and_decay() {
        let pts = SpaceGrid::line(&[0.0, 1.0]).unwrap();
        let k = stationary_kernel(&pts, &StationaryKernelParams::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        let swapped = SpaceGrid::line(&[1.0, 0.0]).unwrap();
        let k2 = stationary_kernel(&swapped, &StationaryKernelParams::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(k2, k.transpose());
    }

    #[test]
    fn simulation_form_distance_one() {
        // exp(-|x-x'|^2 / (2 l_x)) with l_x = 0.5 is rho = sqrt(l_x) in this form.
        let p = StationaryKernelParams::new(1.0, 0.5f64.sqrt()).unwrap();
        assert!((p.eval(&[0.0], &[1.0]) - 0.367_879_441_171_442_3).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(StationaryKernelParams::new(0.0, 1.0).is_err());
        assert!(StationaryKernelParams::new(1.0, -1.0).is_err());
        assert!(StationaryKernelParams::with_exponent(1.0, 1.0, 2.5).is_err());
        let bad = [0.0, f64::NAN];
        assert!(stationary_kernel(&bad[..], &StationaryKernelParams::new(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn mercer_identity() {
        let b = mercer_basis(&DMatrix::<f64>::identity(3, 3), 3).unwrap();
        assert!(b.lambda0.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!((b.reconstruct() - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn mercer_rank_one() {
        let v = DVector::<f64>::from_vec(vec![1.2, -1.6, 0.0]);
        assert!((v.norm() - 2.0).abs() < 1e-15);
        let c = &v * v.transpose();
        let b = mercer_basis(&c, 1).unwrap();
        assert!((b.lambda0[0] - 2.0).abs() < 1e-12);
        // largest-magnitude entry (-1.6) made positive
        let expected = -&v / 2.0;
        assert!((b.phi.column(0) - expected).amax() < 1e-12);
    }

    #[test]
    fn mercer_rejects_asymmetric() {
        let c = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(mercer_basis(&c, 2), Err(Error::Domain(_))));
        assert!(mercer_basis(&DMatrix::<f64>::identity(2, 2), 3).is_err());
    }

    #[test]
    fn decay_weight_examples() {
        let g = decay_weights(2.0f64, 3);
        assert_eq!(g[1], 0.5);
        assert!(decay_weights(0.0f64, 4).iter().all(|&v| v == 1.0));
        let d = dynamic_eigenvalues(1.5, 2, DMatrix::<f64>::zeros(3, 2)).unwrap();
        assert!(d.lambda.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cxt_examples() {
        let c = DMatrix::<f64>::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.3, 0.1, 0.3, 1.0]);
        let basis = mercer_basis(&c, 3).unwrap();
        let u = DMatrix::from_fn(2, 3, |j, l| if j == 0 { basis.lambda0[l] } else { 0.0 });
        let dyn_eig = dynamic_eigenvalues(0.0, 3, u).unwrap();
        assert!((assemble_cxt(&basis, &dyn_eig, 0).unwrap() - &c).amax() < 1e-10);
        assert_eq!(assemble_cxt(&basis, &dyn_eig, 1).unwrap().amax(), 0.0);
        assert!(assemble_cxt(&basis, &dyn_eig, 2).is_err());

        let b1 = mercer_basis(&c, 1).unwrap();
        let d1 = dynamic_eigenvalues(0.0, 1, DMatrix::from_element(1, 1, 0.7)).unwrap();
        let m = assemble_cxt(&b1, &d1, 0).unwrap();
        assert!((m.trace() - 0.49).abs() < 1e-12);
    }

    #[test]
    fn complete_graph_on_four_nodes() {
        let lg = grid_graph_laplacian::<f64>(2, 2, 1).unwrap();
        let expected = DMatrix::<f64>::identity(4, 4) * 4.0 - DMatrix::from_element(4, 4, 1.0);
        assert_eq!(lg.matrix.to_dense(), expected);
        assert!(lg.matrix.row_sums().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn three_by_three_degrees() {
        let lg = grid_graph_laplacian::<f64>(3, 3, 1).unwrap();
        let deg = lg.degrees();
        assert_eq!(deg[4], 8.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(deg[corner], 3.0);
        }
        for edge in [1, 3, 5, 7] {
            assert_eq!(deg[edge], 5.0);
        }
    }

    #[test]
    fn precision_examples() {
        let lg = grid_graph_laplacian::<f64>(3, 3, 1).unwrap();
        let zero = GraphLaplacian {
            matrix: lg.matrix.scale_add_identity(0.0, 0.0),
            ..lg.clone()
        };
        let p = graph_laplacian_precision(&zero, 1.0, 2, 2).unwrap();
        assert!((p.to_dense() - DMatrix::identity(9, 9)).amax() < 1e-15);

        let sn = graph_scale(9, 2);
        let p1 = graph_laplacian_precision(&lg, 0.5, 1, 2).unwrap().to_dense();
        let direct = lg.matrix.to_dense() * sn + DMatrix::identity(9, 9) * 0.5;
        assert_eq!(p1, direct);
        assert!(graph_laplacian_precision(&lg, 0.5, 4, 2).is_err());
        assert!(graph_laplacian_precision(&lg, -0.5, 2, 2).is_err());
    }
}
