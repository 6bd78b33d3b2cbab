//! Distributional checks of the full model: joint-distribution (Geweke)
//! runs, prior-only runs and the coefficient covariance of simulated fields.

use nalgebra::{DMatrix, DVector};
use stgp::diagnostics::mcse;
use stgp::inference::{
    simulate_from_state, Chain, LikelihoodMode, ModelContext, ModelKind, PriorConfig, UPROC,
};
use stgp::kernels::{
    assemble_cxt, dynamic_eigenvalues, mercer_basis, stationary_kernel, StationaryKernelParams,
};
use stgp::linalg::{add_jitter, cholesky};
use stgp::samplers::{RngState, SliceConfig};
use stgp::stdata::{SpaceGrid, SpatioTemporalDataset, TimeGrid};

/// `|mean - target| / mcse` for a named functional of the chain.
#[derive(Debug, Clone)]
pub struct ZScore {
    pub name: String,
    pub z: f64,
}

pub fn z_score(name: impl Into<String>, xs: &[f64], target: f64) -> ZScore {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    ZScore {
        name: name.into(),
        z: (mean - target).abs() / mcse(xs),
    }
}

pub fn max_z(zs: &[ZScore]) -> f64 {
    zs.iter().map(|z| z.z).fold(0.0, f64::max)
}

/// Small prior with finite fourth moments for every variance.
pub fn check_prior(model: ModelKind, l: usize) -> PriorConfig {
    PriorConfig {
        a: [5.0, 5.0, 5.0],
        b: [4.0, 4.0, 4.0],
        m: [0.0, -0.5, -0.5],
        v: [0.25, 0.25, 0.25],
        kappa: 2.0,
        truncation: l,
        model,
        spatial_kernel: Default::default(),
        s_exp: 2.0,
    }
}

fn zero_dataset(i: usize, j: usize, k: usize) -> SpatioTemporalDataset<f64> {
    let xs: Vec<f64> = (0..i).map(|a| a as f64 / (i - 1).max(1) as f64).collect();
    SpatioTemporalDataset::new(
        SpaceGrid::line(&xs).unwrap(),
        TimeGrid::uniform(j, 1.0).unwrap(),
        vec![DMatrix::zeros(i, j); k],
    )
    .unwrap()
}

/// Prior moments of the `sigma2_u` and `U` traces against their targets.
fn u_scores(prior: &PriorConfig, s2u: &[f64], u: &[Vec<f64>]) -> Vec<ZScore> {
    let (a, b) = (prior.a[UPROC], prior.b[UPROC]);
    let mean = b / (a - 1.0);
    let mut out = vec![z_score("sigma2_u", s2u, mean)];
    // the prior variance of every U entry is E[sigma2_u] (1 + nugget)
    let var_u = mean * (1.0 + 1e-9);
    for (c, xs) in u.iter().enumerate() {
        out.push(z_score(format!("U[{c}]"), xs, 0.0));
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        out.push(z_score(format!("U[{c}]^2"), &sq, var_u));
    }
    out
}

/// Successive-conditional joint-distribution test: Gibbs sweeps alternate
/// with re-simulating the data from the current parameters, so the
/// parameter marginals must stay at the prior.
pub fn geweke(model: ModelKind, cycles: usize, seed: u64) -> Vec<ZScore> {
    let (i, j, l, k) = (3, 4, 2, 2);
    let prior = check_prior(model, l);
    let mut ctx = ModelContext::new(&zero_dataset(i, j, k), prior.clone()).unwrap();
    let mut chain = Chain::new(&ctx, seed, 0, SliceConfig::default()).unwrap();
    let ds = simulate_from_state(&chain.state.clone(), &ctx, k, chain.aux_rng()).unwrap();
    ctx.replace_data(&ds).unwrap();

    let mut s2u = Vec::with_capacity(cycles);
    let mut u = vec![Vec::with_capacity(cycles); j * l];
    for _ in 0..cycles {
        chain.step(&ctx).unwrap();
        let st = chain.state.clone();
        s2u.push(st.sigma2_u);
        for (c, v) in st.u.iter().enumerate() {
            u[c].push(*v);
        }
        let ds = simulate_from_state(&st, &ctx, k, chain.aux_rng()).unwrap();
        ctx.replace_data(&ds).unwrap();
    }
    u_scores(&prior, &s2u, &u)
}

/// Chain with the likelihood switched off: every block must recover its prior.
pub fn prior_only(model: ModelKind, iters: usize, seed: u64) -> Vec<ZScore> {
    let (i, j, l, k) = (4, 3, 2, 1);
    let prior = check_prior(model, l);
    let mut ctx = ModelContext::new(&zero_dataset(i, j, k), prior.clone()).unwrap();
    ctx.likelihood = LikelihoodMode::PriorOnly;
    let mut chain = Chain::new(&ctx, seed, 0, SliceConfig::default()).unwrap();
    let mut tr: Vec<Vec<f64>> = vec![Vec::with_capacity(iters); 6];
    let mut u = vec![Vec::with_capacity(iters); j * l];
    for _ in 0..iters {
        chain.step(&ctx).unwrap();
        let st = &chain.state;
        for (c, v) in [st.sigma2_eps, st.sigma2_t, st.sigma2_u, st.eta_x, st.eta_t, st.eta_u]
            .into_iter()
            .enumerate()
        {
            tr[c].push(v);
        }
        for (c, v) in st.u.iter().enumerate() {
            u[c].push(*v);
        }
    }
    let mut out = u_scores(&prior, &tr[2], &u);
    out.push(z_score("sigma2_t", &tr[1], prior.b[1] / (prior.a[1] - 1.0)));
    if model == ModelKind::I {
        out.push(z_score("sigma2_eps", &tr[0], prior.b[0] / (prior.a[0] - 1.0)));
    }
    for (slot, name) in [(0, "eta_x"), (1, "eta_t"), (2, "eta_u")] {
        let xs = &tr[3 + slot];
        out.push(z_score(name, xs, prior.m[slot]));
        let sq: Vec<f64> = xs.iter().map(|x| (x - prior.m[slot]).powi(2)).collect();
        out.push(z_score(format!("{name}^2"), &sq, prior.v[slot]));
    }
    out
}

/// Draws fields with covariance `C_{x|t} (x) I_t` on a 4 x 3 grid, projects
/// them on the basis and compares the empirical covariance of the
/// coefficients with `lambda_l^2(t_j)` on the diagonal and zero elsewhere.
/// Returns the largest deviation in standard errors.
pub fn kl_max_z(n_draws: usize, seed: u64) -> f64 {
    let (i, j, l) = (4, 3, 3);
    let mut rng = RngState::new(seed, 0);
    let xs: Vec<f64> = (0..i).map(|a| a as f64 / 3.0).collect();
    let cx = stationary_kernel(&SpaceGrid::line(&xs).unwrap(), &StationaryKernelParams::new(1.0, 0.4).unwrap()).unwrap();
    let basis = mercer_basis(&cx, l).unwrap();
    let u = DMatrix::from_fn(j, l, |_, _| 0.5 + rng.uniform());
    let de = dynamic_eigenvalues(2.0, l, u).unwrap();

    let factors: Vec<DMatrix<f64>> = (0..j)
        .map(|jj| {
            let mut c = assemble_cxt(&basis, &de, jj).unwrap();
            add_jitter(&mut c);
            cholesky(c, "C_x|t").unwrap().l()
        })
        .collect();
    let n = j * l;
    let mut coef = DMatrix::<f64>::zeros(n, n_draws);
    for d in 0..n_draws {
        for (jj, lf) in factors.iter().enumerate() {
            let f = lf * rng.normal_vec::<f64>(i);
            let p: DVector<f64> = basis.phi.transpose() * f;
            for ll in 0..l {
                coef[(jj * l + ll, d)] = p[ll];
            }
        }
    }

    let lam2 = de.lambda.map(|v| v * v);
    let nd = n_draws as f64;
    let mut worst = 0.0f64;
    for a in 0..n {
        for b in a..n {
            let (xa, xb) = (coef.row(a), coef.row(b));
            let prods: Vec<f64> = xa.iter().zip(xb.iter()).map(|(p, q)| p * q).collect();
            let mean = prods.iter().sum::<f64>() / nd;
            let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (nd - 1.0);
            let target = if a == b { lam2[(a / l, a % l)] } else { 0.0 };
            worst = worst.max((mean - target).abs() / (var / nd).sqrt());
        }
    }
    worst
}
