//! Synthetic spatiotemporal process with a known time-varying spatial
//! covariance, and metrics comparing TESD estimates against it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::TesdEstimate;
use crate::linalg::{add_jitter, cholesky};
use crate::samplers::RngState;
use crate::stdata::{SpaceGrid, SpatioTemporalDataset, TimeGrid};

/// Largest mesh (in points) factored densely by [`generate`].
pub const SIM_DENSE_CAP: usize = 25_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    pub ell_x: f64,
    pub ell_t: f64,
    pub ell_xt: f64,
    pub sigma2_eps: f64,
    pub nx: usize,
    pub nt: usize,
    pub k: usize,
    pub seed: u64,
    /// `(I, J)` of an equally spaced sub-mesh; `None` uses the full mesh.
    #[serde(default)]
    pub submesh: Option<(usize, usize)>,
}

impl Default for SimParams {
    fn default() -> Self {
        let (ell_x, ell_t) = (0.5, 0.3);
        SimParams {
            ell_x,
            ell_t,
            ell_xt: f64::sqrt(ell_x * ell_t),
            sigma2_eps: 1e-2,
            nx: 200,
            nt: 100,
            k: 100,
            seed: 2024,
            submesh: Some((5, 101)),
        }
    }
}

impl SimParams {
    /// Reduced time mesh (`Nt = 40`, sub-mesh `5 x 41`) used for routine runs.
    pub fn desk(k: usize, seed: u64) -> Self {
        SimParams {
            nt: 40,
            k,
            seed,
            submesh: Some((5, 41)),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.ell_x, self.ell_t, self.ell_xt].iter().all(|&v| v > 0.0 && v.is_finite());
        if !pos || !(self.sigma2_eps >= 0.0) || self.nx == 0 || self.nt == 0 || self.k == 0 {
            return Err(Error::domain("simulation needs positive length scales, sigma2_eps >= 0, Nx, Nt, K >= 1"));
        }
        if let Some((i, j)) = self.submesh {
            if i < 2 || j < 2 || i > self.nx + 1 || j > self.nt + 1 {
                return Err(Error::domain(format!(
                    "sub-mesh {i}x{j} must have at least 2 points per axis and fit the {}x{} mesh",
                    self.nx + 1,
                    self.nt + 1
                )));
            }
        }
        Ok(())
    }

    /// Fine-mesh indices of the spatial and temporal sample points.
    pub fn mesh_indices(&self) -> (Vec<usize>, Vec<usize>) {
        match self.submesh {
            Some((i, j)) => {
                let sx = self.nx / (i - 1);
                let st = self.nt / (j - 1);
                ((0..i).map(|a| a * sx).collect(), (0..j).map(|b| b * st).collect())
            }
            None => ((0..=self.nx).collect(), (0..=self.nt).collect()),
        }
    }

    pub fn x_at(&self, idx: usize) -> f64 {
        -1.0 + 2.0 * idx as f64 / self.nx as f64
    }

    pub fn t_at(&self, idx: usize) -> f64 {
        idx as f64 / self.nt as f64
    }

    pub fn space_points(&self) -> Vec<f64> {
        self.mesh_indices().0.into_iter().map(|i| self.x_at(i)).collect()
    }

    pub fn time_points(&self) -> Vec<f64> {
        self.mesh_indices().1.into_iter().map(|i| self.t_at(i)).collect()
    }
}

/// `cos(pi x) sin(2 pi t)`.
pub fn true_mean(x: f64, t: f64) -> f64 {
    (std::f64::consts::PI * x).cos() * (std::f64::consts::TAU * t).sin()
}

/// Spatial covariance of the process at a common time `t`.
pub fn true_tesd(x: f64, xp: f64, t: f64, p: &SimParams) -> f64 {
    let d = (x - xp).abs();
    let nug = if x == xp { p.sigma2_eps } else { 0.0 };
    (-d * d / (2.0 * p.ell_x) - d * t / (2.0 * p.ell_xt)).exp() + nug
}

/// Joint space-time covariance of the simulated process.
pub fn joint_kernel(x: f64, t: f64, xp: f64, tp: f64, p: &SimParams) -> f64 {
    let nug = if x == xp && t == tp { p.sigma2_eps } else { 0.0 };
    let dx = x - xp;
    let dt = t - tp;
    (-dx * dx / (2.0 * p.ell_x) - dt * dt / (2.0 * p.ell_t) - (x * t - xp * tp).abs() / (2.0 * p.ell_xt)).exp() + nug
}

/// Closed-form truth for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthOracle {
    pub params: SimParams,
}

impl TruthOracle {
    pub fn new(params: SimParams) -> Self {
        TruthOracle { params }
    }

    pub fn mean(&self, x: f64, t: f64) -> f64 {
        true_mean(x, t)
    }

    pub fn tesd(&self, x: f64, xp: f64, t: f64) -> f64 {
        true_tesd(x, xp, t, &self.params)
    }

    pub fn tesd_matrix(&self, xs: &[f64], t: f64) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), xs.len(), |a, b| self.tesd(xs[a], xs[b], t))
    }
}

/// Draws `K` trials from the joint Gaussian on the (sub-)mesh by exact Cholesky.
pub fn generate(p: &SimParams) -> Result<SpatioTemporalDataset<f64>> {
    p.validate()?;
    let xs = p.space_points();
    let ts = p.time_points();
    let (i, j) = (xs.len(), ts.len());
    let n = i * j;
    if n > SIM_DENSE_CAP {
        return Err(Error::Capacity {
            what: "simulation mesh (points)",
            size: n,
            cap: SIM_DENSE_CAP,
        });
    }
    let z = |r: usize| (xs[r % i], ts[r / i]);
    let mut cov = DMatrix::from_fn(n, n, |a, b| {
        let (xa, ta) = z(a);
        let (xb, tb) = z(b);
        joint_kernel(xa, ta, xb, tb, p)
    });
    add_jitter(&mut cov);
    let l = cholesky(cov, "simulation joint kernel")?.l();
    let mean = DVector::from_fn(n, |r, _| {
        let (x, t) = z(r);
        true_mean(x, t)
    });
    let trials = (0..p.k)
        .map(|k| {
            let mut rng = RngState::new(p.seed, k as u64);
            let e = &l * rng.normal_vec::<f64>(n);
            DMatrix::from_column_slice(i, j, (&mean + e).as_slice())
        })
        .collect();
    SpatioTemporalDataset::new(SpaceGrid::line(&xs)?, TimeGrid::new(ts)?, trials)
}

/// Estimate-versus-truth comparison on the fitting grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TesdError {
    /// RMS of estimated minus true covariance over all pairs and times.
    pub rmse_overall: f64,
    /// Mean over off-diagonal pairs of the across-time standard deviation
    /// of the estimated covariance.
    pub flatness: f64,
    /// The same statistic for the truth.
    pub flatness_truth: f64,
}

fn flatness_of(mats: &[DMatrix<f64>]) -> f64 {
    let n = mats[0].nrows();
    let (mut acc, mut pairs) = (0.0, 0usize);
    for a in 0..n {
        for b in a + 1..n {
            let vals: Vec<f64> = mats.iter().map(|m| m[(a, b)]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            acc += var.sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        acc / pairs as f64
    }
}

pub fn tesd_error(est: &TesdEstimate<f64>, oracle: &TruthOracle, xs: &[f64]) -> Result<TesdError> {
    if est.cov.is_empty() || est.cov.len() != est.times.len() {
        return Err(Error::domain("estimate has no time slices"));
    }
    if est.cov.iter().any(|c| c.shape() != (xs.len(), xs.len())) {
        return Err(Error::domain("estimate grid does not match the truth locations"));
    }
    let truth: Vec<DMatrix<f64>> = est.times.iter().map(|&t| oracle.tesd_matrix(xs, t)).collect();
    let (mut sq, mut count) = (0.0, 0usize);
    for (e, t) in est.cov.iter().zip(&truth) {
        sq += (e - t).norm_squared();
        count += e.len();
    }
    Ok(TesdError {
        rmse_overall: (sq / count as f64).sqrt(),
        flatness: flatness_of(&est.cov),
        flatness_truth: flatness_of(&truth),
    })
}

/// Lattice image stand-in: smooth blobs whose amplitude correlations drift
/// over time at a cohort-specific rate, plus pixel noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDemoParams {
    pub rows: usize,
    pub cols: usize,
    pub n_time: usize,
    pub k: usize,
    pub n_cohorts: usize,
    pub noise: f64,
    pub blob_radius: f64,
    pub seed: u64,
}

impl Default for ImageDemoParams {
    fn default() -> Self {
        ImageDemoParams {
            rows: 40,
            cols: 40,
            n_time: 5,
            k: 10,
            n_cohorts: 3,
            noise: 0.1,
            blob_radius: 5.0,
            seed: 7,
        }
    }
}

/// One dataset per cohort on a row-major `rows x cols` lattice.
pub fn image_demo(p: &ImageDemoParams) -> Result<Vec<SpatioTemporalDataset<f64>>> {
    if p.rows < 2 || p.cols < 2 || p.n_time < 2 || p.k == 0 || p.n_cohorts == 0 || !(p.noise > 0.0) || !(p.blob_radius > 0.0) {
        return Err(Error::domain("image demo needs a >= 2x2 lattice, J >= 2, K >= 1, positive noise and radius"));
    }
    let (r, c) = (p.rows as f64, p.cols as f64);
    let centers = [(0.25 * r, 0.25 * c), (0.25 * r, 0.75 * c), (0.75 * r, 0.25 * c), (0.75 * r, 0.75 * c)];
    let nb = centers.len();
    let n = p.rows * p.cols;
    let blobs = DMatrix::from_fn(n, nb, |node, b| {
        let (y, x) = ((node / p.cols) as f64, (node % p.cols) as f64);
        let d2 = (y - centers[b].0).powi(2) + (x - centers[b].1).powi(2);
        (-0.5 * d2 / (p.blob_radius * p.blob_radius)).exp()
    });
    let times: Vec<f64> = (0..p.n_time).map(|j| j as f64 / (p.n_time - 1) as f64).collect();
    let space = SpaceGrid::lattice(p.rows, p.cols)?;
    let time = TimeGrid::new(times.clone())?;
    (0..p.n_cohorts)
        .map(|cohort| {
            let rate = (cohort + 1) as f64 / p.n_cohorts as f64;
            let chols = times
                .iter()
                .map(|&t| {
                    let rho = 0.1 + 0.8 * t * rate;
                    let corr = DMatrix::from_fn(nb, nb, |a, b| if a == b { 1.0 } else { rho });
                    cholesky(corr, "blob correlation").map(|ch| ch.l())
                })
                .collect::<Result<Vec<_>>>()?;
            let trials = (0..p.k)
                .map(|k| {
                    let mut rng = RngState::new(p.seed, (cohort * p.k + k) as u64);
                    let mut y = DMatrix::zeros(n, p.n_time);
                    for (jj, l) in chols.iter().enumerate() {
                        let amp = l * rng.normal_vec::<f64>(nb);
                        let noise = rng.normal_vec::<f64>(n) * p.noise;
                        y.set_column(jj, &(&blobs * amp + noise));
                    }
                    y
                })
                .collect();
            SpatioTemporalDataset::new(space.clone(), time.clone(), trials)
        })
        .collect()
}
