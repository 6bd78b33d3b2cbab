use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::context::{BasisEval, ModelContext};
use super::samples::PosteriorSamples;
use super::ModelKind;
use crate::diagnostics::quantile;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which covariance entries get per-draw credible bands.
#[derive(Debug, Clone, PartialEq)]
pub struct TesdOptions {
    /// Explicit `(a, b)` location pairs; `None` means every pair `a <= b`
    /// when `I <= auto_band_max`, none otherwise.
    pub entries: Option<Vec<(usize, usize)>>,
    pub auto_band_max: usize,
}

impl Default for TesdOptions {
    fn default() -> Self {
        TesdOptions {
            entries: None,
            auto_band_max: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TesdBand {
    pub time_index: usize,
    pub a: usize,
    pub b: usize,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Posterior summaries of the conditional spatial covariance at each time.
#[derive(Debug, Clone, PartialEq)]
pub struct TesdEstimate<T: Scalar> {
    pub times: Vec<T>,
    /// Posterior mean of `C_{y|t_j}`.
    pub cov: Vec<DMatrix<T>>,
    /// Correlation matrix of `cov[j]`.
    pub corr: Vec<DMatrix<T>>,
    pub bands: Vec<TesdBand>,
}

pub(crate) fn cov_to_corr<T: Scalar>(c: &DMatrix<T>) -> DMatrix<T> {
    let d: Vec<T> = (0..c.nrows()).map(|i| c[(i, i)].max(T::zero()).sqrt()).collect();
    DMatrix::from_fn(c.nrows(), c.ncols(), |a, b| {
        if a == b {
            T::one()
        } else if d[a] > T::zero() && d[b] > T::zero() {
            (c[(a, b)] / (d[a] * d[b])).max(-T::one()).min(T::one())
        } else {
            T::zero()
        }
    })
}

/// Per-draw `C_{y|t_j} = diag_s I + phi diag(w_j) phi^T` with
/// `w = lambda^2, diag_s = sigma2_t` (Model II) or
/// `w = sigma2_t lambda^2, diag_s = sigma2_eps` (Model I).
fn draw_weights<T: Scalar>(model: ModelKind, st: &super::HyperState<T>) -> (DMatrix<T>, T) {
    match model {
        ModelKind::II => (st.lambda2(), st.sigma2_t),
        ModelKind::I => (st.lambda2() * st.sigma2_t, st.sigma2_eps),
    }
}

pub fn estimate_tesd<T: Scalar>(
    samples: &PosteriorSamples<T>,
    ctx: &ModelContext<T>,
    opts: &TesdOptions,
) -> Result<TesdEstimate<T>> {
    if samples.is_empty() {
        return Err(Error::domain("TESD needs at least one posterior draw"));
    }
    let (i, j) = (ctx.n_space(), ctx.n_time());
    let model = ctx.model();
    let s = T::lit(samples.len() as f64);

    let mut groups: Vec<(Arc<BasisEval<T>>, DMatrix<T>)> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut diag_sum = T::zero();
    let mut per_draw = Vec::with_capacity(samples.len());
    for d in &samples.draws {
        let key = d.state.eta_x.as_f64().to_bits();
        let g = match index.get(&key) {
            Some(&g) => g,
            None => {
                let be = Arc::new(ctx.basis_eval(d.state.eta_x)?);
                groups.push((be, DMatrix::zeros(j, ctx.truncation())));
                index.insert(key, groups.len() - 1);
                groups.len() - 1
            }
        };
        let (w, diag) = draw_weights(model, &d.state);
        groups[g].1 += &w;
        diag_sum += diag;
        per_draw.push((g, w, diag));
    }

    let mut cov = Vec::with_capacity(j);
    for jj in 0..j {
        let mut c = DMatrix::<T>::identity(i, i) * diag_sum;
        for (be, w) in &groups {
            let mut scaled = (*be.phi).clone();
            for (mut col, &wl) in scaled.column_iter_mut().zip(w.row(jj).iter()) {
                col *= wl;
            }
            c.gemm(T::one(), &scaled, &be.phi.transpose(), T::one());
        }
        c /= s;
        crate::linalg::symmetrize(&mut c);
        cov.push(c);
    }
    let corr = cov.iter().map(cov_to_corr).collect();

    let entries = match &opts.entries {
        Some(e) => e.clone(),
        None if i <= opts.auto_band_max => (0..i).flat_map(|a| (a..i).map(move |b| (a, b))).collect(),
        None => Vec::new(),
    };
    let mut bands = Vec::with_capacity(entries.len() * j);
    for &(a, b) in &entries {
        if a >= i || b >= i {
            return Err(Error::domain(format!("band entry ({a}, {b}) outside the grid")));
        }
        for jj in 0..j {
            let vals: Vec<f64> = per_draw
                .iter()
                .map(|(g, w, diag)| {
                    let phi = &groups[*g].0.phi;
                    let mut v = if a == b { *diag } else { T::zero() };
                    for l in 0..w.ncols() {
                        v += w[(jj, l)] * phi[(a, l)] * phi[(b, l)];
                    }
                    v.as_f64()
                })
                .collect();
            bands.push(TesdBand {
                time_index: jj,
                a,
                b,
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                lo: quantile(&vals, 0.025),
                hi: quantile(&vals, 0.975),
            });
        }
    }
    Ok(TesdEstimate {
        times: ctx.time().times().to_vec(),
        cov,
        corr,
        bands,
    })
}
