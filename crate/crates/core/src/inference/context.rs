use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ModelKind, PriorConfig, SpatialKernel, HyperState};
use crate::error::{Error, Result};
use crate::kernels::{
    decay_weights, fix_signs, graph_laplacian_precision, grid_graph_laplacian, mercer_basis, stationary_kernel,
    MercerBasis, StationaryKernelParams,
};
use crate::kronalg::DEFAULT_DENSE_CAP;
use crate::scalar::Scalar;
use crate::sparse::{smallest_eigenpairs, SubspaceOptions};
use crate::stdata::{SpaceGrid, SpatioTemporalDataset, SufficientStats, TimeGrid};

/// Largest `I` for which per-time scatter matrices are cached.
const SCATTER_MAX_SPACE: usize = 128;

/// Whether the data enter the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMode {
    Data,
    /// Likelihood replaced by a constant; the chain targets the prior.
    PriorOnly,
}

#[derive(Debug, Clone)]
enum SpatialSource<T: Scalar> {
    Stationary,
    Graph {
        phi: Arc<DMatrix<T>>,
        /// `s_n mu_l` for the Laplacian eigenvalues `mu_l` matching `phi`.
        spectrum: DVector<T>,
        power: u32,
        density: f64,
    },
}

/// Data-dependent quantities that only change with the basis.
#[derive(Debug, Clone)]
pub struct Projections<T: Scalar> {
    /// `phi^T Ybar` (`L x J`).
    pub b_ybar: DMatrix<T>,
    /// Complement part `R = Ybar - phi phi^T Ybar` (`I x J`).
    pub r: DMatrix<T>,
    /// `sum_k (phi_l^T y*_kj)^2` (`J x L`).
    pub proj_sq: DMatrix<T>,
}

/// Basis at one value of `eta_x` together with its data projections.
#[derive(Debug, Clone)]
pub struct BasisEval<T: Scalar> {
    pub eta_x: T,
    pub phi: Arc<DMatrix<T>>,
    pub lambda0: DVector<T>,
    pub proj: Arc<Projections<T>>,
    data_version: u64,
}

impl<T: Scalar> BasisEval<T> {
    pub fn basis(&self) -> MercerBasis<T> {
        MercerBasis {
            phi: (*self.phi).clone(),
            lambda0: self.lambda0.clone(),
        }
    }
}

/// Everything a chain needs besides its state: grids, data summaries,
/// prior and the spatial-basis machinery.
#[derive(Debug, Clone)]
pub struct ModelContext<T: Scalar> {
    space: SpaceGrid<T>,
    time: TimeGrid<T>,
    stats: SufficientStats<T>,
    prior: PriorConfig,
    gamma: DVector<T>,
    source: SpatialSource<T>,
    graph_proj: Option<Arc<Projections<T>>>,
    /// Per-time scatter `sum_k y*_kj y*_kj^T` of the centered trials, kept
    /// when `I` is small so projections cost `O(J L I^2)` instead of `O(K I J L)`.
    scatter: Option<Arc<Vec<DMatrix<T>>>>,
    data_version: u64,
    pub likelihood: LikelihoodMode,
    pub dense_cap: usize,
}

impl<T: Scalar> ModelContext<T> {
    pub fn new(ds: &SpatioTemporalDataset<T>, prior: PriorConfig) -> Result<Self> {
        Self::with_dense_cap(ds, prior, DEFAULT_DENSE_CAP)
    }

    pub fn with_dense_cap(ds: &SpatioTemporalDataset<T>, prior: PriorConfig, dense_cap: usize) -> Result<Self> {
        prior.validate()?;
        let (i, j) = (ds.n_space(), ds.n_time());
        if prior.truncation > i {
            return Err(Error::domain(format!("L={} exceeds the number of locations I={i}", prior.truncation)));
        }
        if prior.model == ModelKind::I && i * j > dense_cap {
            return Err(Error::Capacity {
                what: "dense model I marginal (I*J)",
                size: i * j,
                cap: dense_cap,
            });
        }
        let source = match prior.spatial_kernel {
            SpatialKernel::Stationary => SpatialSource::Stationary,
            SpatialKernel::GraphLaplacian { rows, cols, window, s } => {
                if rows * cols != i {
                    return Err(Error::domain(format!("lattice {rows}x{cols} does not match I={i}")));
                }
                let lg = grid_graph_laplacian::<T>(rows, cols, window)?;
                // the eigenvectors do not depend on tau2, so they come from s_n L itself
                let op = graph_laplacian_precision(&lg, T::zero(), 1, ds.space().dim())?;
                let (theta, mut phi) = smallest_eigenpairs(&op, prior.truncation, SubspaceOptions::default())?;
                fix_signs(&mut phi);
                let spectrum = theta.map(|v| v.max(T::zero()));
                SpatialSource::Graph {
                    phi: Arc::new(phi),
                    spectrum,
                    power: s,
                    density: lg.density,
                }
            }
        };
        let gamma = decay_weights(T::lit(prior.kappa), prior.truncation);
        let mut ctx = ModelContext {
            space: ds.space().clone(),
            time: ds.time().clone(),
            stats: ds.sufficient_stats(),
            prior,
            gamma,
            source,
            graph_proj: None,
            scatter: None,
            data_version: 0,
            likelihood: LikelihoodMode::Data,
            dense_cap,
        };
        ctx.refresh_data_caches();
        Ok(ctx)
    }

    fn refresh_scatter(&mut self) {
        let (i, j, k) = (self.n_space(), self.n_time(), self.n_trials());
        self.scatter = None;
        if k < 2 || i > SCATTER_MAX_SPACE || !matches!(self.source, SpatialSource::Stationary) {
            return;
        }
        let mut out = vec![DMatrix::zeros(i, i); j];
        for kk in 0..k {
            let y = self.stats.centered_matrix(kk);
            for (jj, s) in out.iter_mut().enumerate() {
                let c = y.column(jj);
                s.ger(T::one(), &c, &c, T::one());
            }
        }
        self.scatter = Some(Arc::new(out));
    }

    fn refresh_data_caches(&mut self) {
        self.refresh_scatter();
        if let SpatialSource::Graph { phi, .. } = &self.source {
            self.graph_proj = Some(Arc::new(self.projections(phi)));
        }
    }

    /// Swaps in new observations on the same grids.
    pub fn replace_data(&mut self, ds: &SpatioTemporalDataset<T>) -> Result<()> {
        if ds.space() != &self.space || ds.time() != &self.time {
            return Err(Error::domain("replacement data must share the context grids"));
        }
        self.stats = ds.sufficient_stats();
        self.data_version += 1;
        self.refresh_data_caches();
        Ok(())
    }

    pub fn space(&self) -> &SpaceGrid<T> {
        &self.space
    }

    pub fn time(&self) -> &TimeGrid<T> {
        &self.time
    }

    pub fn stats(&self) -> &SufficientStats<T> {
        &self.stats
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    pub fn model(&self) -> ModelKind {
        self.prior.model
    }

    pub fn gamma(&self) -> &DVector<T> {
        &self.gamma
    }

    pub fn n_space(&self) -> usize {
        self.stats.n_space
    }

    pub fn n_time(&self) -> usize {
        self.stats.n_time
    }

    pub fn n_trials(&self) -> usize {
        self.stats.n_trials
    }

    pub fn truncation(&self) -> usize {
        self.prior.truncation
    }

    /// Non-zero density of the lattice Laplacian, when one is used.
    pub fn graph_density(&self) -> Option<f64> {
        match &self.source {
            SpatialSource::Graph { density, .. } => Some(*density),
            SpatialSource::Stationary => None,
        }
    }

    fn kernel_params(&self, sigma2: T, eta: T) -> Result<StationaryKernelParams<T>> {
        StationaryKernelParams::with_exponent(sigma2, eta.exp(), T::lit(self.prior.s_exp))
    }

    /// `sigma2 exp(-0.5 |t - t'|^s / exp(eta)^s)` on the time grid plus
    /// [`ModelContext::time_nugget`] on the diagonal.
    pub fn time_kernel(&self, sigma2: T, eta: T) -> Result<DMatrix<T>> {
        let mut c = stationary_kernel(&self.time, &self.kernel_params(sigma2, eta)?)?;
        let nug = Self::time_nugget();
        for d in 0..c.nrows() {
            c[(d, d)] += nug;
        }
        Ok(c)
    }

    /// Diagonal jitter of the time kernels: the relative jitter of the
    /// unit-variance kernel, held fixed as `sigma2` varies. Scaling it with
    /// `sigma2` would hand Model II a free white-noise term of size
    /// `1e-9 sigma2_t` that the sampler drifts into at large `sigma2_t`.
    pub fn time_nugget() -> T {
        T::lit(T::JITTER)
    }

    /// Cross kernel between arbitrary times and the grid, consistent with
    /// [`ModelContext::time_kernel`]: the nugget applies where times coincide.
    pub fn time_cross_kernel(&self, sigma2: T, eta: T, times: &[T]) -> Result<DMatrix<T>> {
        let p = self.kernel_params(sigma2, eta)?;
        let grid = self.time.times();
        let nug = Self::time_nugget();
        Ok(DMatrix::from_fn(times.len(), grid.len(), |a, b| {
            let v = p.eval_dist((times[a] - grid[b]).abs());
            if times[a] == grid[b] {
                v + nug
            } else {
                v
            }
        }))
    }

    /// Time-kernel scalar parameters for the stationary form.
    pub fn time_params(&self, sigma2: T, eta: T) -> Result<StationaryKernelParams<T>> {
        self.kernel_params(sigma2, eta)
    }

    pub fn c_t(&self, st: &HyperState<T>) -> Result<DMatrix<T>> {
        self.time_kernel(st.sigma2_t, st.eta_t)
    }

    /// Unit-variance `C_0u(eta_u)`.
    pub fn c0u(&self, eta_u: T) -> Result<DMatrix<T>> {
        self.time_kernel(T::one(), eta_u)
    }

    /// Static spatial kernel `C_x(eta_x)` with unit variance; stationary only.
    pub fn spatial_kernel(&self, eta_x: T) -> Result<DMatrix<T>> {
        match self.source {
            SpatialSource::Stationary => stationary_kernel(&self.space, &self.kernel_params(T::one(), eta_x)?),
            SpatialSource::Graph { .. } => Err(Error::Unsupported(
                "the graph-Laplacian covariance is only available through its precision".into(),
            )),
        }
    }

    /// Stationary spatial parameters at `eta_x`; `None` under the graph kernel.
    pub fn spatial_params(&self, eta_x: T) -> Result<Option<StationaryKernelParams<T>>> {
        match self.source {
            SpatialSource::Stationary => Ok(Some(self.kernel_params(T::one(), eta_x)?)),
            SpatialSource::Graph { .. } => Ok(None),
        }
    }

    fn projections(&self, phi: &DMatrix<T>) -> Projections<T> {
        let ybar = self.stats.ybar_matrix();
        let b_ybar = phi.tr_mul(&ybar);
        let r = &ybar - phi * &b_ybar;
        let (j, l) = (self.n_time(), phi.ncols());
        let mut proj_sq = DMatrix::zeros(j, l);
        if let Some(scatter) = &self.scatter {
            for (jj, s) in scatter.iter().enumerate() {
                let sp = s * phi;
                for ll in 0..l {
                    proj_sq[(jj, ll)] = phi.column(ll).dot(&sp.column(ll));
                }
            }
        } else if self.n_trials() > 1 {
            for k in 0..self.n_trials() {
                let p = phi.tr_mul(&self.stats.centered_matrix(k));
                for jj in 0..j {
                    for ll in 0..l {
                        proj_sq[(jj, ll)] += p[(ll, jj)] * p[(ll, jj)];
                    }
                }
            }
        }
        Projections { b_ybar, r, proj_sq }
    }

    /// Mercer basis of the static spatial kernel at `eta_x`, with projections.
    pub fn basis_eval(&self, eta_x: T) -> Result<BasisEval<T>> {
        match &self.source {
            SpatialSource::Stationary => {
                let c = self.spatial_kernel(eta_x)?;
                let basis = mercer_basis(&c, self.truncation())?;
                let proj = Arc::new(self.projections(&basis.phi));
                Ok(BasisEval {
                    eta_x,
                    phi: Arc::new(basis.phi),
                    lambda0: basis.lambda0,
                    proj,
                    data_version: self.data_version,
                })
            }
            SpatialSource::Graph {
                phi, spectrum, power, ..
            } => {
                let tau2 = eta_x.exp();
                if !tau2.finite() {
                    return Err(Error::domain("tau2 overflow"));
                }
                let half = T::lit(*power as f64 / 2.0);
                let lambda0 = spectrum.map(|m| (m + tau2).powf(-half));
                Ok(BasisEval {
                    eta_x,
                    phi: phi.clone(),
                    lambda0,
                    proj: self.graph_proj.clone().expect("graph projections built with the context"),
                    data_version: self.data_version,
                })
            }
        }
    }

    pub fn basis(&self, eta_x: T) -> Result<MercerBasis<T>> {
        Ok(self.basis_eval(eta_x)?.basis())
    }
}

/// Small per-chain cache of [`BasisEval`]s keyed by the exact `eta_x` value.
#[derive(Debug, Clone)]
pub struct BasisCache<T: Scalar> {
    entries: VecDeque<Arc<BasisEval<T>>>,
    capacity: usize,
    pub hits: u64,
    pub misses: u64,
}

impl<T: Scalar> Default for BasisCache<T> {
    fn default() -> Self {
        Self::new(4)
    }
}

impl<T: Scalar> BasisCache<T> {
    pub fn new(capacity: usize) -> Self {
        BasisCache {
            entries: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            hits: 0,
            misses: 0,
        }
    }

    pub fn get(&mut self, ctx: &ModelContext<T>, eta_x: T) -> Result<Arc<BasisEval<T>>> {
        if let Some(pos) = self
            .entries
            .iter()
            .position(|e| e.eta_x == eta_x && e.data_version == ctx.data_version)
        {
            self.hits += 1;
            let e = self.entries.remove(pos).expect("position in range");
            self.entries.push_front(e.clone());
            return Ok(e);
        }
        self.misses += 1;
        let e = Arc::new(ctx.basis_eval(eta_x)?);
        if self.entries.len() == self.capacity {
            self.entries.pop_back();
        }
        self.entries.push_front(e.clone());
        Ok(e)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}
