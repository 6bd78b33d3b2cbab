//! Closed-form-target checks for the generic MCMC kernels.

use nalgebra::DVector;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use stgp::diagnostics::{ess, mcse, mean_var};
use stgp::samplers::{ess_update, inverse_gamma_draw, slice_sample_1d, RngState, SliceConfig};

/// Mean, its batch-means standard error, its iid-equivalent bound
/// `sd / sqrt(ESS)` and the sample variance.
#[derive(Debug, Clone, Copy)]
pub struct Moments {
    pub mean: f64,
    pub se: f64,
    pub var: f64,
    pub var_se: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let (mean, var) = mean_var(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    Moments {
        mean,
        se: mcse(xs).max(var.sqrt() / ess(xs).sqrt()),
        var,
        var_se: mcse(&sq),
    }
}

pub fn slice_chain(n: usize, seed: u64, x0: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut rng = RngState::new(seed, 0);
    let cfg = SliceConfig::default();
    let mut x = x0;
    (0..n)
        .map(|_| {
            x = slice_sample_1d(&f, x, &cfg, &mut rng).unwrap();
            x
        })
        .collect()
}

pub fn std_normal_logpdf(x: f64) -> f64 {
    -0.5 * x * x
}

/// Log-density of the inverse gamma up to a constant, `-inf` off support.
pub fn inv_gamma_logpdf(a: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| if x > 0.0 { -(a + 1.0) * x.ln() - b / x } else { f64::NEG_INFINITY }
}

/// ESS chain for the prior `N(0, I_2)` and likelihood `N(y; x, I_2)`.
pub fn ess_conjugate_chain(n: usize, seed: u64, y: [f64; 2], use_lik: bool) -> Vec<DVector<f64>> {
    let mut rng = RngState::new(seed, 0);
    let yv = DVector::from_vec(y.to_vec());
    let mut x = DVector::zeros(2);
    (0..n)
        .map(|_| {
            x = ess_update(
                |v: &DVector<f64>| if use_lik { -0.5 * (v - &yv).norm_squared() } else { 0.0 },
                |r: &mut RngState| r.normal_vec(2),
                &x,
                &mut rng,
            )
            .unwrap();
            x.clone()
        })
        .collect()
}

pub fn inverse_gamma_sample(a: f64, b: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngState::new(seed, 0);
    (0..n).map(|_| inverse_gamma_draw(a, b, &mut rng).unwrap()).collect()
}

/// Pearson statistic of `xs` in `bins` equiprobable bins of `N(mean, sd^2)`
/// after thinning to roughly independent draws, with the 1% critical value.
pub fn chi_square_normal(xs: &[f64], mean: f64, sd: f64, bins: usize) -> (f64, f64) {
    let thin = ((xs.len() as f64 / ess(xs)).ceil() as usize).max(1);
    let kept: Vec<f64> = xs.iter().step_by(thin).copied().collect();
    let dist = Normal::new(mean, sd).unwrap();
    let mut counts = vec![0usize; bins];
    for &x in &kept {
        let b = ((dist.cdf(x) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let expected = vec![kept.len() as f64 / bins as f64; bins];
    let stat = stgp::diagnostics::chi_square(&counts, &expected);
    let crit = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99);
    (stat, crit)
}
