//! MCMC building blocks: a seeded stream RNG, Neal's univariate slice
//! sampler, the elliptical slice sampler and inverse-gamma draws.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// ChaCha20 generator identified by `(seed, stream)`.
///
/// The output sequence depends only on the pair and the call sequence, so
/// chains and Gibbs blocks can own disjoint streams of one seed.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngState { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Fresh state on another stream of the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        RngState::new(self.seed, stream)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `(0, 1]`; safe inside `ln`.
    pub fn uniform_pos(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec<T: Scalar>(&mut self, n: usize) -> DVector<T> {
        DVector::from_fn(n, |_, _| T::lit(self.normal()))
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub width: f64,
    pub max_steps: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            width: 1.0,
            max_steps: 50,
        }
    }
}

impl SliceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.width.is_finite() || self.max_steps == 0 {
            return Err(Error::domain("slice config needs width > 0 and max_steps >= 1"));
        }
        Ok(())
    }
}

/// Bound on shrinkage contractions before a slice update gives up.
pub const MAX_CONTRACTIONS: usize = 1000;

/// Result of one slice update with its cost counters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceStep<T> {
    pub value: T,
    pub logdensity: T,
    pub evaluations: usize,
    pub contractions: usize,
}

/// One stepping-out and shrinkage slice update of `x0`.
pub fn slice_sample_1d<T: Scalar, F: FnMut(T) -> T>(
    logdensity: F,
    x0: T,
    cfg: &SliceConfig,
    rng: &mut RngState,
) -> Result<T> {
    slice_step(logdensity, x0, cfg, rng).map(|s| s.value)
}

/// [`slice_sample_1d`] with counters.
pub fn slice_step<T: Scalar, F: FnMut(T) -> T>(
    mut logdensity: F,
    x0: T,
    cfg: &SliceConfig,
    rng: &mut RngState,
) -> Result<SliceStep<T>> {
    cfg.validate()?;
    let f0 = logdensity(x0);
    if !f0.finite() {
        return Err(Error::domain(format!("slice sampler started at a point with log-density {f0}")));
    }
    let mut evaluations = 1;
    let logy = f0 + T::lit(rng.uniform_pos().ln());
    let w = T::lit(cfg.width);
    let mut lo = x0 - w * T::lit(rng.uniform());
    let mut hi = lo + w;
    let mut left = (cfg.max_steps as f64 * rng.uniform()).floor() as usize;
    let mut right = cfg.max_steps - 1 - left;
    while left > 0 && logdensity(lo) > logy {
        lo -= w;
        left -= 1;
        evaluations += 1;
    }
    while right > 0 && logdensity(hi) > logy {
        hi += w;
        right -= 1;
        evaluations += 1;
    }
    for contractions in 0..MAX_CONTRACTIONS {
        let x1 = lo + (hi - lo) * T::lit(rng.uniform());
        let f1 = logdensity(x1);
        evaluations += 1;
        if f1.finite() && f1 >= logy {
            return Ok(SliceStep {
                value: x1,
                logdensity: f1,
                evaluations,
                contractions,
            });
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
    }
    Err(Error::numerical(format!(
        "slice sampler failed to shrink onto the slice after {MAX_CONTRACTIONS} contractions at x0 = {x0}"
    )))
}

/// Bound on bracket contractions in one elliptical slice update.
pub const MAX_ESS_CONTRACTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EssStep<T: Scalar> {
    pub value: DVector<T>,
    pub loglik: T,
    pub contractions: usize,
}

/// One elliptical slice update for a zero-mean Gaussian prior.
pub fn ess_update<T, L, P>(loglik: L, prior_draw: P, current: &DVector<T>, rng: &mut RngState) -> Result<DVector<T>>
where
    T: Scalar,
    L: FnMut(&DVector<T>) -> T,
    P: FnMut(&mut RngState) -> DVector<T>,
{
    ess_step(loglik, prior_draw, current, rng).map(|s| s.value)
}

/// [`ess_update`] with counters.
pub fn ess_step<T, L, P>(mut loglik: L, mut prior_draw: P, current: &DVector<T>, rng: &mut RngState) -> Result<EssStep<T>>
where
    T: Scalar,
    L: FnMut(&DVector<T>) -> T,
    P: FnMut(&mut RngState) -> DVector<T>,
{
    let ll0 = loglik(current);
    if !ll0.finite() {
        return Err(Error::domain(format!("elliptical slice started at log-likelihood {ll0}")));
    }
    let nu = prior_draw(rng);
    if nu.len() != current.len() {
        return Err(Error::domain("prior draw length differs from the current state"));
    }
    let logy = ll0 + T::lit(rng.uniform_pos().ln());
    let two_pi = std::f64::consts::TAU;
    let mut theta = rng.uniform() * two_pi;
    let (mut lo, mut hi) = (theta - two_pi, theta);
    for contractions in 0..MAX_ESS_CONTRACTIONS {
        let (s, c) = theta.sin_cos();
        let prop = current * T::lit(c) + &nu * T::lit(s);
        let ll = loglik(&prop);
        if ll.finite() && ll > logy {
            return Ok(EssStep {
                value: prop,
                loglik: ll,
                contractions,
            });
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = lo + (hi - lo) * rng.uniform();
    }
    Err(Error::numerical("elliptical slice bracket failed to close"))
}

/// Draw with density proportional to `x^(-a-1) exp(-b/x)`.
pub fn inverse_gamma_draw<T: Scalar>(a: T, b: T, rng: &mut RngState) -> Result<T> {
    let (af, bf) = (a.as_f64(), b.as_f64());
    if !(af > 0.0 && bf > 0.0) || !af.is_finite() || !bf.is_finite() {
        return Err(Error::domain(format!("inverse gamma needs a, b > 0 (got {af}, {bf})")));
    }
    let g = Gamma::new(af, 1.0).map_err(|e| Error::domain(e.to_string()))?;
    let x: f64 = g.sample(rng);
    Ok(b / T::lit(x))
}
