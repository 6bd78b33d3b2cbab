use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::context::{BasisEval, LikelihoodMode, ModelContext};
use super::{HyperState, ModelKind, EPS, SPACE, TIME, UPROC};
use crate::kronalg::{model1_prior_cov, Model2Marginal};
use crate::linalg::{chol_logdet, chol_quad, cholesky};
use crate::scalar::Scalar;

/// Floor on `lambda^2` inside logarithms and divisions.
pub const LAMBDA2_FLOOR: f64 = 1e-12;

/// Inverse-gamma log-density up to a constant.
pub fn variance_prior<T: Scalar>(sigma2: T, a: f64, b: f64) -> T {
    -T::lit(a + 1.0) * sigma2.ln() - T::lit(b) / sigma2
}

/// Normal log-density up to a constant.
pub fn eta_prior<T: Scalar>(eta: T, m: f64, v: f64) -> T {
    let d = eta - T::lit(m);
    -T::lit(0.5) * d * d / T::lit(v)
}

/// `tr(U^T C^-1 U)` from a factor of `C`.
pub(crate) fn trace_quad<T: Scalar>(c: &Cholesky<T, Dyn>, u: &DMatrix<T>) -> T {
    u.column_iter()
        .map(|col| chol_quad(c, &col.into_owned()))
        .fold(T::zero(), |a, b| a + b)
}

/// Matrix-normal log-density of `Lambda = gamma o U` with row covariance
/// `sigma2_u C_0u`, up to a constant.
pub fn lambda_prior<T: Scalar>(u: &DMatrix<T>, sigma2_u: T, c0u: &Cholesky<T, Dyn>, gamma: &DVector<T>) -> T {
    let (j, l) = u.shape();
    let log_gamma: T = gamma.iter().map(|g| g.ln()).fold(T::zero(), |a, b| a + b);
    let logdet_cu = T::lit(j as f64) * sigma2_u.ln() + chol_logdet(c0u);
    -T::lit(j as f64) * log_gamma - T::lit(l as f64 / 2.0) * logdet_cu - T::lit(0.5) * trace_quad(c0u, u) / sigma2_u
}

fn or_neg_inf<T: Scalar>(v: Option<T>) -> T {
    match v {
        Some(x) if !x.as_f64().is_nan() => x,
        _ => T::neg_infinity(),
    }
}

/// Marginal log-likelihood (M integrated out) at `st` under the basis `be`.
/// Never fails: numerical breakdowns evaluate to `-inf`.
pub fn loglik<T: Scalar>(st: &HyperState<T>, ctx: &ModelContext<T>, be: &BasisEval<T>) -> T {
    if ctx.likelihood == LikelihoodMode::PriorOnly {
        return T::zero();
    }
    or_neg_inf(match ctx.model() {
        ModelKind::II => loglik_m2(st, ctx, be),
        ModelKind::I => loglik_m1(st, ctx, be),
    })
}

fn loglik_m2<T: Scalar>(st: &HyperState<T>, ctx: &ModelContext<T>, be: &BasisEval<T>) -> Option<T> {
    let k = ctx.n_trials();
    let lambda2 = st.lambda2();
    let half = T::lit(0.5);
    let mut ll = T::zero();
    if k > 1 {
        let floor = T::lit(LAMBDA2_FLOOR);
        let (mut logs, mut forms) = (T::zero(), T::zero());
        for (l2, &s) in lambda2.iter().zip(be.proj.proj_sq.iter()) {
            let mut v = *l2;
            if v < floor {
                if s != T::zero() {
                    return None;
                }
                v = floor;
            }
            logs += v.ln();
            forms += s / v;
        }
        ll -= T::lit((k - 1) as f64) * half * logs + half * forms;
    }
    let c_t = ctx.c_t(st).ok()?;
    let marg = Model2Marginal::from_lambda2(c_t, (*be.phi).clone(), lambda2, k).ok()?;
    ll -= half * (marg.logdet() + marg.quad_projected(&be.proj.r, &be.proj.b_ybar));
    Some(ll)
}

fn loglik_m1<T: Scalar>(st: &HyperState<T>, ctx: &ModelContext<T>, be: &BasisEval<T>) -> Option<T> {
    let (i, j, k) = (ctx.n_space(), ctx.n_time(), ctx.n_trials());
    let stats = ctx.stats();
    let half = T::lit(0.5);
    let s2 = st.sigma2_eps;
    let c_t = ctx.c_t(st).ok()?;
    let mut dense = model1_prior_cov(&c_t, &be.phi, &st.lambda);
    let nug = s2 / T::lit(k as f64);
    for d in 0..i * j {
        dense[(d, d)] += nug;
    }
    let chol = cholesky(dense, "model I marginal").ok()?;
    let mut ll = -half * (chol_logdet(&chol) + chol_quad(&chol, &stats.ybar));
    if k > 1 {
        let resid = stats.ysq - stats.ybar.norm_squared();
        ll -= T::lit((i * j * (k - 1)) as f64) * half * s2.ln() + half * T::lit(k as f64) * resid / s2;
    }
    Some(ll)
}

/// Sum of the hyperprior terms (variances and log length-scales).
pub(crate) fn hyper_prior<T: Scalar>(st: &HyperState<T>, ctx: &ModelContext<T>) -> T {
    let p = ctx.prior();
    let mut acc = variance_prior(st.sigma2_t, p.a[TIME], p.b[TIME]) + variance_prior(st.sigma2_u, p.a[UPROC], p.b[UPROC]);
    if ctx.model() == ModelKind::I {
        acc += variance_prior(st.sigma2_eps, p.a[EPS], p.b[EPS]);
    }
    acc + eta_prior(st.eta_x, p.m[SPACE], p.v[SPACE])
        + eta_prior(st.eta_t, p.m[TIME], p.v[TIME])
        + eta_prior(st.eta_u, p.m[UPROC], p.v[UPROC])
}

pub(crate) fn logpost_with<T: Scalar>(st: &HyperState<T>, ctx: &ModelContext<T>, be: &BasisEval<T>) -> T {
    let Ok(c0u) = ctx.c0u(st.eta_u).and_then(|c| cholesky(c, "C_0u")) else {
        return T::neg_infinity();
    };
    let v = loglik(st, ctx, be) + lambda_prior(&st.u, st.sigma2_u, &c0u, ctx.gamma()) + hyper_prior(st, ctx);
    or_neg_inf(Some(v))
}

/// Log-posterior of the collapsed model at `st`, up to an additive constant.
pub fn logpost<T: Scalar>(st: &HyperState<T>, ctx: &ModelContext<T>) -> T {
    if !st.is_valid() {
        return T::neg_infinity();
    }
    match ctx.basis_eval(st.eta_x) {
        Ok(be) => logpost_with(st, ctx, &be),
        Err(_) => T::neg_infinity(),
    }
}

/// [`logpost`] for a Model II context.
pub fn logpost_m2<T: Scalar>(st: &HyperState<T>, ctx: &ModelContext<T>) -> T {
    debug_assert_eq!(ctx.model(), ModelKind::II);
    logpost(st, ctx)
}

/// [`logpost`] for a Model I context.
pub fn logpost_m1<T: Scalar>(st: &HyperState<T>, ctx: &ModelContext<T>) -> T {
    debug_assert_eq!(ctx.model(), ModelKind::I);
    logpost(st, ctx)
}
