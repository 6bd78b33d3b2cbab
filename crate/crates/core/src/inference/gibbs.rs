use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::context::{BasisCache, BasisEval, ModelContext};
use super::logpost::{eta_prior, lambda_prior, logpost_with, loglik, trace_quad, variance_prior};
use super::samples::{Draw, PosteriorSamples, RunMeta};
use super::{HyperState, ModelKind, PriorConfig, EPS, SPACE, TIME, UPROC};
use crate::error::{Error, Result};
use crate::kronalg::{model1_prior_cov, Model2Marginal};
use crate::linalg::{add_jitter, cholesky};
use crate::samplers::{ess_step, inverse_gamma_draw, slice_step, RngState, SliceConfig};
use crate::scalar::Scalar;
use crate::stdata::SpatioTemporalDataset;

/// MCMC run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRun {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    #[serde(default)]
    pub sample_m: bool,
    #[serde(default)]
    pub slice: SliceConfig,
}

impl FitRun {
    pub fn new(n_iter: usize, burn_in: usize, thin: usize, seed: u64) -> Self {
        FitRun {
            n_iter,
            burn_in,
            thin,
            seed,
            sample_m: false,
            slice: SliceConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.burn_in > self.n_iter {
            return Err(Error::domain("run needs thin >= 1 and burn_in <= n_iter"));
        }
        self.slice.validate()
    }

    /// Number of retained draws.
    pub fn n_draws(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Work counters accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerCounters {
    pub sweeps: u64,
    pub slice_updates: u64,
    pub slice_evaluations: u64,
    pub slice_contractions: u64,
    pub ess_updates: u64,
    pub ess_contractions: u64,
    pub conjugate_draws: u64,
    pub basis_cache_hits: u64,
    pub basis_cache_misses: u64,
}

// One RNG stream per Gibbs block.
const B_INIT: usize = 0;
const B_EPS: usize = 1;
const B_T: usize = 2;
const B_U: usize = 3;
const B_ETA_X: usize = 4;
const B_ETA_T: usize = 5;
const B_ETA_U: usize = 6;
const B_LAMBDA: usize = 7;
const B_M: usize = 8;
const STREAMS_PER_CHAIN: u64 = 16;

fn block_rngs(seed: u64, chain: u64) -> Vec<RngState> {
    (0..STREAMS_PER_CHAIN)
        .map(|b| RngState::new(seed, chain * STREAMS_PER_CHAIN + b))
        .collect()
}

fn prior_mean_or_one(a: f64, b: f64) -> f64 {
    if a > 1.0 {
        b / (a - 1.0)
    } else {
        1.0
    }
}

/// `U` drawn from its prior: each column `N(0, sigma2_u C_0u)`.
fn draw_u<T: Scalar>(ctx: &ModelContext<T>, sigma2_u: T, eta_u: T, rng: &mut RngState) -> Result<DMatrix<T>> {
    let c0u = cholesky(ctx.c0u(eta_u)?, "C_0u")?;
    let (j, l) = (ctx.n_time(), ctx.truncation());
    let z = DMatrix::from_fn(j, l, |_, _| T::lit(rng.normal()));
    Ok(c0u.l() * z * sigma2_u.sqrt())
}

/// Starting point: variances at their prior means (1 when undefined),
/// `eta` at the prior means and `U` drawn from its prior.
pub fn initial_state<T: Scalar>(ctx: &ModelContext<T>, rng: &mut RngState) -> Result<HyperState<T>> {
    let p = ctx.prior();
    let sigma2_u = T::lit(prior_mean_or_one(p.a[UPROC], p.b[UPROC]));
    let eta_u = T::lit(p.m[UPROC]);
    let u = draw_u(ctx, sigma2_u, eta_u, rng)?;
    let mut st = HyperState {
        sigma2_eps: T::lit(prior_mean_or_one(p.a[EPS], p.b[EPS])),
        sigma2_t: T::lit(prior_mean_or_one(p.a[TIME], p.b[TIME])),
        sigma2_u,
        eta_x: T::lit(p.m[SPACE]),
        eta_t: T::lit(p.m[TIME]),
        eta_u,
        lambda: u.clone(),
        u: DMatrix::zeros(0, 0),
    };
    st.set_u(u, ctx.gamma());
    Ok(st)
}

/// One Gibbs chain: state, per-block RNG streams and a basis cache.
#[derive(Debug, Clone)]
pub struct Chain<T: Scalar> {
    pub state: HyperState<T>,
    pub counters: SamplerCounters,
    rngs: Vec<RngState>,
    cache: BasisCache<T>,
    slice: SliceConfig,
}

impl<T: Scalar> Chain<T> {
    pub fn new(ctx: &ModelContext<T>, seed: u64, chain: u64, slice: SliceConfig) -> Result<Self> {
        let mut rngs = block_rngs(seed, chain);
        let state = initial_state(ctx, &mut rngs[B_INIT])?;
        Ok(Self::from_parts(state, rngs, slice))
    }

    pub fn with_state(state: HyperState<T>, seed: u64, chain: u64, slice: SliceConfig) -> Self {
        Self::from_parts(state, block_rngs(seed, chain), slice)
    }

    fn from_parts(state: HyperState<T>, rngs: Vec<RngState>, slice: SliceConfig) -> Self {
        Chain {
            state,
            counters: SamplerCounters::default(),
            rngs,
            cache: BasisCache::default(),
            slice,
        }
    }

    /// RNG stream reserved for work outside the sweep (data re-simulation in tests).
    pub fn aux_rng(&mut self) -> &mut RngState {
        &mut self.rngs[STREAMS_PER_CHAIN as usize - 1]
    }

    pub fn basis(&mut self, ctx: &ModelContext<T>) -> Result<std::sync::Arc<BasisEval<T>>> {
        self.cache.get(ctx, self.state.eta_x)
    }

    pub fn logpost(&mut self, ctx: &ModelContext<T>) -> T {
        match self.basis(ctx) {
            Ok(be) => logpost_with(&self.state, ctx, &be),
            Err(_) => T::neg_infinity(),
        }
    }

    fn slice_update(
        &mut self,
        block: usize,
        x0: T,
        f: impl FnMut(T) -> T,
    ) -> Result<T> {
        let step = slice_step(f, x0, &self.slice, &mut self.rngs[block])?;
        self.counters.slice_updates += 1;
        self.counters.slice_evaluations += step.evaluations as u64;
        self.counters.slice_contractions += step.contractions as u64;
        Ok(step.value)
    }

    /// One full sweep over all blocks.
    pub fn step(&mut self, ctx: &ModelContext<T>) -> Result<()> {
        let p = ctx.prior().clone();
        let be = self.basis(ctx)?;

        if ctx.model() == ModelKind::I {
            let base = self.state.clone();
            let w = self.slice_update(B_EPS, base.sigma2_eps.ln(), |w| {
                let mut s = base.clone();
                s.sigma2_eps = w.exp();
                loglik(&s, ctx, &be) + variance_prior(s.sigma2_eps, p.a[EPS], p.b[EPS]) + w
            })?;
            self.state.sigma2_eps = w.exp();
        }

        let base = self.state.clone();
        let w = self.slice_update(B_T, base.sigma2_t.ln(), |w| {
            let mut s = base.clone();
            s.sigma2_t = w.exp();
            loglik(&s, ctx, &be) + variance_prior(s.sigma2_t, p.a[TIME], p.b[TIME]) + w
        })?;
        self.state.sigma2_t = w.exp();

        let c0u = cholesky(ctx.c0u(self.state.eta_u)?, "C_0u")?;
        let (j, l) = self.state.u.shape();
        let a_post = T::lit(p.a[UPROC] + 0.5 * (j * l) as f64);
        let b_post = T::lit(p.b[UPROC]) + T::lit(0.5) * trace_quad(&c0u, &self.state.u);
        self.state.sigma2_u = inverse_gamma_draw(a_post, b_post, &mut self.rngs[B_U])?;
        self.counters.conjugate_draws += 1;

        let base = self.state.clone();
        let mut cache = std::mem::take(&mut self.cache);
        let eta_x = self.slice_update(B_ETA_X, base.eta_x, |e| {
            let Ok(be) = cache.get(ctx, e) else {
                return T::neg_infinity();
            };
            let mut s = base.clone();
            s.eta_x = e;
            loglik(&s, ctx, &be) + eta_prior(e, p.m[SPACE], p.v[SPACE])
        });
        self.cache = cache;
        self.state.eta_x = eta_x?;
        let be = self.basis(ctx)?;

        let base = self.state.clone();
        self.state.eta_t = self.slice_update(B_ETA_T, base.eta_t, |e| {
            let mut s = base.clone();
            s.eta_t = e;
            loglik(&s, ctx, &be) + eta_prior(e, p.m[TIME], p.v[TIME])
        })?;

        let base = self.state.clone();
        self.state.eta_u = self.slice_update(B_ETA_U, base.eta_u, |e| {
            let Ok(c) = ctx.c0u(e).and_then(|c| cholesky(c, "C_0u")) else {
                return T::neg_infinity();
            };
            lambda_prior(&base.u, base.sigma2_u, &c, ctx.gamma()) + eta_prior(e, p.m[UPROC], p.v[UPROC])
        })?;

        let lu = cholesky(ctx.c0u(self.state.eta_u)?, "C_0u")?.l() * self.state.sigma2_u.sqrt();
        let base = self.state.clone();
        let gamma = ctx.gamma().clone();
        let cur = DVector::from_column_slice(base.u.as_slice());
        let step = ess_step(
            |v: &DVector<T>| {
                let mut s = base.clone();
                s.set_u(DMatrix::from_column_slice(j, l, v.as_slice()), &gamma);
                loglik(&s, ctx, &be)
            },
            |rng: &mut RngState| {
                let z = DMatrix::from_fn(j, l, |_, _| T::lit(rng.normal()));
                DVector::from_column_slice((&lu * z).as_slice())
            },
            &cur,
            &mut self.rngs[B_LAMBDA],
        )?;
        self.counters.ess_updates += 1;
        self.counters.ess_contractions += step.contractions as u64;
        self.state.set_u(DMatrix::from_column_slice(j, l, step.value.as_slice()), &gamma);

        self.counters.sweeps += 1;
        self.counters.basis_cache_hits = self.cache.hits;
        self.counters.basis_cache_misses = self.cache.misses;
        Ok(())
    }

    /// Draw of the mean field `M` from its analytic conditional posterior.
    pub fn draw_m(&mut self, ctx: &ModelContext<T>) -> Result<DVector<T>> {
        let be = self.basis(ctx)?;
        let st = self.state.clone();
        let n = ctx.n_space() * ctx.n_time();
        let z = self.rngs[B_M].normal_vec::<T>(n);
        let c_t = ctx.c_t(&st)?;
        let ybar = &ctx.stats().ybar;
        match ctx.model() {
            ModelKind::II => {
                let marg = Model2Marginal::from_lambda2(c_t, (*be.phi).clone(), st.lambda2(), ctx.n_trials())?;
                marg.posterior(ybar)?.draw(&z)
            }
            ModelKind::I => {
                let cz = model1_prior_cov(&c_t, &be.phi, &st.lambda);
                let mut dense = cz.clone();
                let nug = st.sigma2_eps / T::lit(ctx.n_trials() as f64);
                for d in 0..n {
                    dense[(d, d)] += nug;
                }
                let chol = cholesky(dense, "model I marginal")?;
                let mean = &cz * chol.solve(ybar);
                let mut cov = &cz - &cz * chol.solve(&cz);
                crate::linalg::symmetrize(&mut cov);
                add_jitter(&mut cov);
                let l = cholesky(cov, "model I posterior of M")?.l();
                Ok(mean + l * z)
            }
        }
    }
}

/// One Gibbs sweep from `state`, with block streams split off `rng`.
pub fn gibbs_step<T: Scalar>(state: &HyperState<T>, ctx: &ModelContext<T>, rng: &mut RngState) -> Result<HyperState<T>> {
    let seed = rng.next_u64();
    let mut chain = Chain::with_state(state.clone(), seed, 0, SliceConfig::default());
    chain.step(ctx)?;
    Ok(chain.state)
}

/// Simulates `k` trials from the model at `st`.
pub fn simulate_from_state<T: Scalar>(
    st: &HyperState<T>,
    ctx: &ModelContext<T>,
    k: usize,
    rng: &mut RngState,
) -> Result<SpatioTemporalDataset<T>> {
    let (i, j) = (ctx.n_space(), ctx.n_time());
    let be = ctx.basis_eval(st.eta_x)?;
    let c_t = ctx.c_t(st)?;
    let trials = match ctx.model() {
        ModelKind::II => {
            let lt = cholesky(c_t, "C_t")?.l();
            let z = DMatrix::from_fn(i, j, |_, _| T::lit(rng.normal()));
            let m = z * lt.transpose();
            (0..k)
                .map(|_| {
                    let mut y = m.clone();
                    for jj in 0..j {
                        let coef = DVector::from_fn(st.lambda.ncols(), |l, _| st.lambda[(jj, l)] * T::lit(rng.normal()));
                        let mut col = y.column_mut(jj);
                        col += &*be.phi * coef;
                    }
                    y
                })
                .collect()
        }
        ModelKind::I => {
            let mut cz = model1_prior_cov(&c_t, &be.phi, &st.lambda);
            add_jitter(&mut cz);
            let l = cholesky(cz, "model I prior covariance")?.l();
            let m = l * rng.normal_vec::<T>(i * j);
            let sd = st.sigma2_eps.sqrt();
            (0..k)
                .map(|_| {
                    let e = rng.normal_vec::<T>(i * j) * sd;
                    DMatrix::from_column_slice(i, j, (&m + e).as_slice())
                })
                .collect()
        }
    };
    SpatioTemporalDataset::new(ctx.space().clone(), ctx.time().clone(), trials)
}

/// Runs one chain on `ds`.
pub fn fit<T: Scalar>(ds: &SpatioTemporalDataset<T>, prior: &PriorConfig, run: &FitRun) -> Result<PosteriorSamples<T>> {
    let ctx = ModelContext::new(ds, prior.clone())?;
    fit_context(&ctx, run)
}

pub fn fit_context<T: Scalar>(ctx: &ModelContext<T>, run: &FitRun) -> Result<PosteriorSamples<T>> {
    fit_chain(ctx, run, 0)
}

/// Runs chain number `chain`; chains with different numbers use disjoint
/// RNG streams of the same seed.
pub fn fit_chain<T: Scalar>(ctx: &ModelContext<T>, run: &FitRun, chain: u64) -> Result<PosteriorSamples<T>> {
    run.validate()?;
    let start = Instant::now();
    let mut chain = Chain::new(ctx, run.seed, chain, run.slice)?;
    let lp0 = chain.logpost(ctx);
    if !lp0.finite() {
        return Err(Error::numerical(format!("log-posterior at the initial state is {lp0}")));
    }
    let mut draws = Vec::with_capacity(run.n_draws());
    for it in 0..run.n_iter {
        chain.step(ctx)?;
        if it >= run.burn_in && (it + 1 - run.burn_in) % run.thin == 0 {
            let m = if run.sample_m { Some(chain.draw_m(ctx)?) } else { None };
            let logpost = chain.logpost(ctx);
            draws.push(Draw {
                state: chain.state.clone(),
                m,
                logpost,
            });
        }
    }
    let meta = RunMeta {
        seed: run.seed,
        n_iter: run.n_iter,
        burn_in: run.burn_in,
        thin: run.thin,
        sample_m: run.sample_m,
        n_space: ctx.n_space(),
        n_time: ctx.n_time(),
        n_trials: ctx.n_trials(),
        n_draws: draws.len(),
        prior: ctx.prior().clone(),
        counters: chain.counters.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(PosteriorSamples { draws, meta })
}
