//! Posterior inference for Model I and Model II by Metropolis-within-Gibbs.

mod context;
mod gibbs;
mod logpost;
mod samples;
mod tesd;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use context::{BasisCache, BasisEval, LikelihoodMode, ModelContext};
pub use gibbs::{
    fit, fit_chain, fit_context, gibbs_step, initial_state, simulate_from_state, Chain, FitRun, SamplerCounters,
};
pub use logpost::{
    eta_prior, lambda_prior, logpost, logpost_m1, logpost_m2, loglik, variance_prior, LAMBDA2_FLOOR,
};
pub use samples::{Draw, PosteriorSamples, RunMeta};
pub(crate) use tesd::cov_to_corr;
pub use tesd::{estimate_tesd, TesdBand, TesdEstimate, TesdOptions};

/// Slot of `sigma2_eps` in the `a` and `b` triples.
pub const EPS: usize = 0;
/// Slot of the temporal parameters in every triple.
pub const TIME: usize = 1;
/// Slot of the `u` process parameters in every triple.
pub const UPROC: usize = 2;
/// Slot of `eta_x` in the `m` and `V` triples.
pub const SPACE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Kronecker-product prior on the mean with iid noise.
    I,
    /// Kronecker-sum marginal.
    II,
}

/// Spatial kernel family behind the Mercer basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialKernel {
    /// `exp(-0.5 |x - x'|^s / rho_x^s)` with `eta_x = log rho_x`.
    #[default]
    Stationary,
    /// `(s_n L + tau2 I)^(-s)` on a `rows x cols` lattice with `eta_x = log tau2`.
    GraphLaplacian {
        rows: usize,
        cols: usize,
        window: usize,
        s: u32,
    },
}

fn default_s_exp() -> f64 {
    2.0
}

/// Hyperprior settings.
///
/// `a` and `b` parametrize the inverse-gamma priors of
/// `(sigma2_eps, sigma2_t, sigma2_u)` (the first slot is ignored by
/// Model II); `m` and `V` the normal priors of `(eta_x, eta_t, eta_u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub m: [f64; 3],
    #[serde(rename = "V")]
    pub v: [f64; 3],
    pub kappa: f64,
    #[serde(rename = "L")]
    pub truncation: usize,
    pub model: ModelKind,
    #[serde(default)]
    pub spatial_kernel: SpatialKernel,
    #[serde(default = "default_s_exp")]
    pub s_exp: f64,
}

impl PriorConfig {
    /// Model II settings of the simulation study.
    pub fn simulation_model2(truncation: usize) -> Self {
        PriorConfig {
            a: [1.0, 1.0, 1.0],
            b: [0.1, 1.0, 5.0],
            m: [0.0, 0.0, 0.0],
            v: [1.0, 1.0, 1.0],
            kappa: 2.0,
            truncation,
            model: ModelKind::II,
            spatial_kernel: SpatialKernel::Stationary,
            s_exp: 2.0,
        }
    }

    /// Model I settings of the simulation study.
    pub fn simulation_model1(truncation: usize) -> Self {
        PriorConfig {
            b: [5.0, 10.0, 10.0],
            v: [0.1, 0.1, 0.01],
            model: ModelKind::I,
            ..Self::simulation_model2(truncation)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |xs: &[f64; 3]| xs.iter().all(|&x| x > 0.0 && x.is_finite());
        if !pos(&self.a) || !pos(&self.b) {
            return Err(Error::domain("prior a and b must be positive"));
        }
        if !pos(&self.v) {
            return Err(Error::domain("prior V must be positive"));
        }
        if self.m.iter().any(|x| !x.is_finite()) || !self.kappa.is_finite() {
            return Err(Error::domain("prior m and kappa must be finite"));
        }
        if self.truncation == 0 {
            return Err(Error::domain("L must be >= 1"));
        }
        if !(self.s_exp > 0.0 && self.s_exp <= 2.0) {
            return Err(Error::domain("s_exp must lie in (0, 2]"));
        }
        if let SpatialKernel::GraphLaplacian { rows, cols, window, s } = self.spatial_kernel {
            if rows < 2 || cols < 2 || window < 1 || s == 0 || s > crate::kernels::MAX_PRECISION_POWER {
                return Err(Error::domain("graph Laplacian needs rows, cols >= 2, window >= 1, 1 <= s <= 3"));
            }
        }
        Ok(())
    }
}

use nalgebra::{DMatrix, DVector};

use crate::scalar::Scalar;

/// Sampled parameters. `eta_*` are log length-scales (`eta_x = log tau2`
/// under the graph-Laplacian kernel) and `lambda = gamma o U` columnwise.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState<T: Scalar> {
    pub sigma2_eps: T,
    pub sigma2_t: T,
    pub sigma2_u: T,
    pub eta_x: T,
    pub eta_t: T,
    pub eta_u: T,
    pub u: DMatrix<T>,
    pub lambda: DMatrix<T>,
}

impl<T: Scalar> HyperState<T> {
    pub fn set_u(&mut self, u: DMatrix<T>, gamma: &DVector<T>) {
        self.lambda = crate::kernels::scale_columns(&u, gamma);
        self.u = u;
    }

    /// Elementwise `lambda^2` (`J x L`).
    pub fn lambda2(&self) -> DMatrix<T> {
        self.lambda.map(|v| v * v)
    }

    pub fn is_valid(&self) -> bool {
        let pos = [self.sigma2_eps, self.sigma2_t, self.sigma2_u]
            .iter()
            .all(|&v| v > T::zero() && v.finite());
        let fin = [self.eta_x, self.eta_t, self.eta_u].iter().all(|v| v.finite());
        pos && fin && self.u.iter().all(|v| v.finite())
    }
}
