//! Posterior predictions: the mean function at new space-time points, the
//! spatial covariance evolved to other times, and the spatial covariance
//! extended to new locations.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::quantile;
use crate::error::{Error, Result};
use crate::inference::{HyperState, ModelContext, ModelKind, PosteriorSamples};
use crate::kernels::{stationary_cross_kernel, MercerBasis};
use crate::kronalg::{model1_prior_cov, Model2Marginal};
use crate::linalg::cholesky;
use crate::scalar::Scalar;
use crate::stdata::io::write_atomic;

/// Relative floor on static eigenvalues used in the Nystrom extension.
pub const LAMBDA0_REL_FLOOR: f64 = 1e-12;

/// Posterior of `m(x*, t*)` aggregated over draws.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPrediction {
    pub mean: f64,
    /// Law of total variance across draws.
    pub variance: f64,
    pub per_draw_mean: Vec<f64>,
    pub per_draw_var: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TesdTarget<T> {
    FutureTime(T),
    NewLocation(Vec<T>),
}

/// Predicted covariance entries with cross-draw quantile bands.
///
/// For [`TesdTarget::FutureTime`] `values` is the `I x I` matrix
/// `C_{x|t*}`; for [`TesdTarget::NewLocation`] it is `I x J` with entry
/// `(i, j) = C_{x|t_j}(x_i, x*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TesdPrediction<T: Scalar> {
    pub target: TesdTarget<T>,
    pub values: DMatrix<T>,
    pub lo: DMatrix<T>,
    pub hi: DMatrix<T>,
    pub per_draw: Vec<DMatrix<T>>,
    /// Basis terms dropped for falling below the eigenvalue floor.
    pub dropped_terms: usize,
}

impl<T: Scalar> TesdPrediction<T> {
    /// Correlations from a predicted `I x I` covariance.
    pub fn correlation(&self) -> Result<DMatrix<T>> {
        match self.target {
            TesdTarget::FutureTime(_) => Ok(crate::inference::cov_to_corr(&self.values)),
            TesdTarget::NewLocation(_) => Err(Error::domain("correlation needs a square covariance prediction")),
        }
    }
}

fn check_nonempty<T: Scalar>(samples: &PosteriorSamples<T>) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::domain("prediction needs at least one posterior draw"));
    }
    Ok(())
}

fn bands<T: Scalar>(per_draw: &[DMatrix<T>]) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
    let (r, c) = per_draw[0].shape();
    let n = T::lit(per_draw.len() as f64);
    let mut mean = DMatrix::zeros(r, c);
    for m in per_draw {
        mean += m;
    }
    mean /= n;
    let mut lo = DMatrix::zeros(r, c);
    let mut hi = DMatrix::zeros(r, c);
    for a in 0..r {
        for b in 0..c {
            let vals: Vec<f64> = per_draw.iter().map(|m| m[(a, b)].as_f64()).collect();
            lo[(a, b)] = T::lit(quantile(&vals, 0.025));
            hi[(a, b)] = T::lit(quantile(&vals, 0.975));
        }
    }
    (mean, lo, hi)
}

fn training_index<T: Scalar>(ctx: &ModelContext<T>, x: &[T]) -> Result<Option<usize>> {
    if x.len() != ctx.space().dim() || x.iter().any(|v| !v.finite()) {
        return Err(Error::domain("prediction location must be finite with the grid dimension"));
    }
    Ok(ctx.space().points().position(|p| p == x))
}

/// Basis values at `x*`: the stored row at a training site, otherwise the
/// extension `C_x(x*, X) phi_l / lambda0_l^2`. Returns the values and the
/// number of terms dropped below the eigenvalue floor.
fn basis_at<T: Scalar>(ctx: &ModelContext<T>, basis: &MercerBasis<T>, eta_x: T, x: &[T]) -> Result<(DVector<T>, usize)> {
    if let Some(i) = training_index(ctx, x)? {
        return Ok((basis.phi.row(i).transpose(), 0));
    }
    let Some(params) = ctx.spatial_params(eta_x)? else {
        return Err(Error::Unsupported(
            "extension to off-grid locations needs a stationary spatial kernel".into(),
        ));
    };
    let xs: &[T] = x;
    let pt = crate::stdata::SpaceGrid::from_flat(xs.to_vec(), x.len())?;
    let k = stationary_cross_kernel(&pt, ctx.space(), &params)?;
    let kphi = (k * &basis.phi).transpose();
    let floor = T::lit(LAMBDA0_REL_FLOOR) * basis.lambda0[0];
    let mut dropped = 0;
    let out = DVector::from_fn(basis.truncation(), |l, _| {
        let l0 = basis.lambda0[l];
        if l0 <= floor || l0 == T::zero() {
            dropped += 1;
            T::zero()
        } else {
            kphi[l] / (l0 * l0)
        }
    });
    Ok((out, dropped))
}

/// GP-conditional `lambda(t*)` (length `L`) for one draw, with the
/// conditional variance of each component.
fn lambda_at<T: Scalar>(ctx: &ModelContext<T>, st: &HyperState<T>, t: T) -> Result<(DVector<T>, DVector<T>)> {
    if !t.finite() {
        return Err(Error::domain("prediction time must be finite"));
    }
    // C_u = sigma2_u C_0u, so the weights only need the unit-variance kernel
    let chol = cholesky(ctx.c0u(st.eta_u)?, "C_0u")?;
    let k = ctx.time_cross_kernel(T::one(), st.eta_u, &[t])?;
    let w = chol.solve(&k.transpose());
    let mean = st.lambda.tr_mul(&w.column(0));
    let prior_var = T::one() + ModelContext::<T>::time_nugget();
    let var_u = st.sigma2_u * (prior_var - (&k * &w)[(0, 0)]).max(T::zero());
    let gamma = ctx.gamma();
    let var = DVector::from_fn(gamma.len(), |l, _| gamma[l] * gamma[l] * var_u);
    Ok((mean, var))
}

/// Per-draw `(m', C')` of the mean function at `(x*, t*)`.
pub fn predict_mean_draw<T: Scalar>(ctx: &ModelContext<T>, st: &HyperState<T>, x: &[T], t: T) -> Result<(T, T)> {
    if !t.finite() {
        return Err(Error::domain("prediction time must be finite"));
    }
    let (i, j) = (ctx.n_space(), ctx.n_time());
    let be = ctx.basis_eval(st.eta_x)?;
    let c_t = ctx.c_t(st)?;
    let ct_star = ctx.time_cross_kernel(st.sigma2_t, st.eta_t, &[t])?;
    let prior_t = st.sigma2_t + ModelContext::<T>::time_nugget();
    let ybar = &ctx.stats().ybar;
    match ctx.model() {
        ModelKind::II => {
            let Some(site) = training_index(ctx, x)? else {
                return Ok((T::zero(), prior_t));
            };
            let mut c = DVector::zeros(i * j);
            for jj in 0..j {
                c[jj * i + site] = ct_star[(0, jj)];
            }
            let marg = Model2Marginal::from_lambda2(c_t, (*be.phi).clone(), st.lambda2(), ctx.n_trials())?;
            let w = marg.inverse_apply(&c)?;
            Ok((w.dot(ybar), (prior_t - c.dot(&w)).max(T::zero())))
        }
        ModelKind::I => {
            let basis = be.basis();
            let (phi_star, _) = basis_at(ctx, &basis, st.eta_x, x)?;
            let (lam_star, _) = lambda_at(ctx, st, t)?;
            let g_star = phi_star.component_mul(&lam_star);
            let mut c = DVector::zeros(i * j);
            for jj in 0..j {
                let g = &basis.phi * st.lambda.row(jj).transpose().component_mul(&g_star);
                c.rows_mut(jj * i, i).copy_from(&(g * ct_star[(0, jj)]));
            }
            let mut dense = model1_prior_cov(&c_t, &basis.phi, &st.lambda);
            let nug = st.sigma2_eps / T::lit(ctx.n_trials() as f64);
            for d in 0..i * j {
                dense[(d, d)] += nug;
            }
            let chol = cholesky(dense, "model I marginal")?;
            let w = chol.solve(&c);
            let prior = g_star.norm_squared() * prior_t;
            Ok((w.dot(ybar), (prior - c.dot(&w)).max(T::zero())))
        }
    }
}

/// Posterior of `m(x*, t*)` averaged over draws.
pub fn predict_mean<T: Scalar>(samples: &PosteriorSamples<T>, ctx: &ModelContext<T>, x: &[T], t: T) -> Result<MeanPrediction> {
    check_nonempty(samples)?;
    let mut means = Vec::with_capacity(samples.len());
    let mut vars = Vec::with_capacity(samples.len());
    for d in &samples.draws {
        let (m, v) = predict_mean_draw(ctx, &d.state, x, t)?;
        means.push(m.as_f64());
        vars.push(v.as_f64());
    }
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let within = vars.iter().sum::<f64>() / n;
    let between = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let variance = within + between;
    let half = 1.959_963_984_540_054 * variance.sqrt();
    Ok(MeanPrediction {
        mean,
        variance,
        per_draw_mean: means,
        per_draw_var: vars,
        lo: mean - half,
        hi: mean + half,
    })
}

/// `C_{x|t*}` on the training sites for one draw.
pub fn tesd_future_draw<T: Scalar>(ctx: &ModelContext<T>, st: &HyperState<T>, t: T, add_variance: bool) -> Result<DMatrix<T>> {
    let be = ctx.basis_eval(st.eta_x)?;
    let (mean, var) = lambda_at(ctx, st, t)?;
    let mut w = mean.map(|v| v * v);
    if add_variance {
        w += var;
    }
    let scaled = crate::kernels::scale_columns(&be.phi, &w);
    let mut c = scaled * be.phi.transpose();
    crate::linalg::symmetrize(&mut c);
    Ok(c)
}

/// Spatial covariance among the training sites at time `t*`, from the
/// squared GP-conditional mean of each `lambda_l(t*)`.
pub fn predict_tesd_future<T: Scalar>(
    samples: &PosteriorSamples<T>,
    ctx: &ModelContext<T>,
    t: T,
    add_variance: bool,
) -> Result<TesdPrediction<T>> {
    check_nonempty(samples)?;
    let per_draw = samples
        .draws
        .iter()
        .map(|d| tesd_future_draw(ctx, &d.state, t, add_variance))
        .collect::<Result<Vec<_>>>()?;
    let (values, lo, hi) = bands(&per_draw);
    Ok(TesdPrediction {
        target: TesdTarget::FutureTime(t),
        values,
        lo,
        hi,
        per_draw,
        dropped_terms: 0,
    })
}

/// `C_{x|t_j}(x_i, x*)` (`I x J`) for one draw, with the dropped-term count.
pub fn tesd_neighbor_draw<T: Scalar>(ctx: &ModelContext<T>, st: &HyperState<T>, x: &[T]) -> Result<(DMatrix<T>, usize)> {
    let basis = ctx.basis(st.eta_x)?;
    let (phi_star, dropped) = basis_at(ctx, &basis, st.eta_x, x)?;
    let w = st.lambda2();
    let mut out = DMatrix::zeros(ctx.n_space(), ctx.n_time());
    for jj in 0..ctx.n_time() {
        let coef = w.row(jj).transpose().component_mul(&phi_star);
        out.set_column(jj, &(&basis.phi * coef));
    }
    Ok((out, dropped))
}

/// Extends the fitted spatial covariance to the new location `x*`.
pub fn predict_tesd_neighbor<T: Scalar>(
    samples: &PosteriorSamples<T>,
    ctx: &ModelContext<T>,
    x: &[T],
) -> Result<TesdPrediction<T>> {
    if ctx.model() == ModelKind::I {
        return Err(Error::Unsupported("covariance extension to new locations is unsupported for model I".into()));
    }
    check_nonempty(samples)?;
    let mut per_draw = Vec::with_capacity(samples.len());
    let mut dropped_terms = 0;
    for d in &samples.draws {
        let (m, dropped) = tesd_neighbor_draw(ctx, &d.state, x)?;
        per_draw.push(m);
        dropped_terms += dropped;
    }
    let (values, lo, hi) = bands(&per_draw);
    Ok(TesdPrediction {
        target: TesdTarget::NewLocation(x.to_vec()),
        values,
        lo,
        hi,
        per_draw,
        dropped_terms,
    })
}

/// One CSV row: `target-id, estimate, lo2.5, hi97.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn write_prediction_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut out = String::from("target-id,estimate,lo2.5,hi97.5\n");
    for r in rows {
        out.push_str(&format!("{},{:e},{:e},{:e}\n", r.id, r.estimate, r.lo, r.hi));
    }
    write_atomic(path, out.as_bytes())
}
