//! Dense brute-force oracles and random small instances shared by the
//! integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use stgp::inference::{HyperState, ModelContext, ModelKind, PriorConfig};
use stgp::kernels::{decay_weights, scale_columns};
use stgp::samplers::RngState;
use stgp::stdata::{SpaceGrid, SpatioTemporalDataset, TimeGrid};

pub mod mcmc;
pub mod props;

pub const JIT: f64 = 1e-9;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

pub fn uniform(rng: &mut RngState, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

pub fn usize_in(rng: &mut RngState, lo: usize, hi: usize) -> usize {
    lo + ((hi - lo + 1) as f64 * rng.uniform()) as usize
}

/// `sigma2 exp(-0.5 (a - b)^2 / rho^2)` for scalar points.
pub fn se(a: &[f64], b: &[f64], sigma2: f64, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |p, q| {
        let d = a[p] - b[q];
        sigma2 * (-0.5 * d * d / (rho * rho)).exp()
    })
}

/// Square time kernel with the fixed diagonal nugget.
pub fn se_jit(a: &[f64], sigma2: f64, rho: f64) -> DMatrix<f64> {
    se(a, a, sigma2, rho) + DMatrix::identity(a.len(), a.len()) * JIT
}

/// `log |det|` and `A^{-1} b` by LU.
pub fn lu_logdet_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (f64, DVector<f64>) {
    let lu = a.clone().lu();
    let u = lu.u();
    let logdet = (0..u.nrows()).map(|i| u[(i, i)].abs().ln()).sum();
    (logdet, lu.solve(b).expect("nonsingular"))
}

/// Gaussian log-density with all constants.
pub fn gauss_logpdf(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let (ld, w) = lu_logdet_solve(cov, y);
    let n = y.len() as f64;
    -0.5 * (ld + y.dot(&w) + n * (2.0 * std::f64::consts::PI).ln())
}

/// Pseudo-inverse and pseudo-log-determinant of a PSD matrix.
pub fn pseudo(a: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, f64) {
    let e = SymmetricEigen::new(a.clone());
    let top = e.eigenvalues.amax();
    let n = a.nrows();
    let mut pinv = DMatrix::zeros(n, n);
    let mut ld = 0.0;
    for k in 0..n {
        let v = e.eigenvalues[k];
        if v > rel_tol * top {
            let c = e.eigenvectors.column(k);
            pinv += &c * c.transpose() / v;
            ld += v.ln();
        }
    }
    (pinv, ld)
}

pub struct Instance {
    pub ds: SpatioTemporalDataset<f64>,
    pub ctx: ModelContext<f64>,
    pub state: HyperState<f64>,
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
}

pub fn sorted_points(rng: &mut RngState, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    // jittered equispaced points keep the kernels well conditioned
    let h = (hi - lo) / n as f64;
    (0..n).map(|k| lo + h * (k as f64 + 0.2 + 0.6 * rng.uniform())).collect()
}

pub fn random_prior(rng: &mut RngState, model: ModelKind, l: usize) -> PriorConfig {
    let mut p = match model {
        ModelKind::II => PriorConfig::simulation_model2(l),
        ModelKind::I => PriorConfig::simulation_model1(l),
    };
    for k in 0..3 {
        p.a[k] = uniform(rng, 0.5, 3.0);
        p.b[k] = uniform(rng, 0.1, 5.0);
        p.m[k] = uniform(rng, -1.0, 0.5);
        p.v[k] = uniform(rng, 0.2, 2.0);
    }
    p.kappa = uniform(rng, 1.0, 3.0);
    p
}

/// Random small dataset, prior and state. `full_rank` forces `L = I`.
pub fn random_instance(rng: &mut RngState, model: ModelKind, max_i: usize, max_j: usize, max_k: usize, full_rank: bool) -> Instance {
    let i = usize_in(rng, 2, max_i);
    let j = usize_in(rng, 2, max_j);
    let k = usize_in(rng, 1, max_k);
    let l = if full_rank { i } else { usize_in(rng, 1, i) };
    let xs = sorted_points(rng, i, -1.0, 1.0);
    let ts = sorted_points(rng, j, 0.0, 1.0);
    let trials = (0..k)
        .map(|_| DMatrix::from_fn(i, j, |_, _| rng.normal()))
        .collect();
    let ds = SpatioTemporalDataset::new(SpaceGrid::line(&xs).unwrap(), TimeGrid::new(ts.clone()).unwrap(), trials).unwrap();
    let prior = random_prior(rng, model, l);
    let ctx = ModelContext::new(&ds, prior).unwrap();
    let u = DMatrix::from_fn(j, l, |_, _| {
        let s = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        s * uniform(rng, 0.5, 1.5)
    });
    let mut state = HyperState {
        sigma2_eps: uniform(rng, 0.2, 2.0),
        sigma2_t: uniform(rng, 0.2, 2.0),
        sigma2_u: uniform(rng, 0.2, 2.0),
        eta_x: uniform(rng, -1.0, 0.0),
        eta_t: uniform(rng, -2.0, -0.7),
        eta_u: uniform(rng, -2.0, -0.7),
        u: DMatrix::zeros(j, l),
        lambda: DMatrix::zeros(j, l),
    };
    state.set_u(u, ctx.gamma());
    Instance { ds, ctx, state, xs, ts }
}

/// Orthonormal eigenvectors of the static spatial kernel, leading `l`
/// columns, descending eigenvalues.
pub fn dense_basis(xs: &[f64], eta_x: f64, l: usize) -> (DMatrix<f64>, DVector<f64>) {
    let c = se(xs, xs, 1.0, eta_x.exp());
    let e = SymmetricEigen::new(c);
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[b].partial_cmp(&e.eigenvalues[a]).unwrap());
    let phi = DMatrix::from_fn(xs.len(), l, |r, c| e.eigenvectors[(r, idx[c])]);
    let vals = DVector::from_fn(l, |c, _| e.eigenvalues[idx[c]]);
    (phi, vals)
}

/// Flat space-fastest vector of an `I x J` matrix.
pub fn vecm(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn model2_cxt(phi: &DMatrix<f64>, lambda: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let l2 = lambda.row(j).transpose().map(|v| v * v);
    scale_columns(phi, &l2) * phi.transpose()
}

/// Dense `Cov(ybar)` for Model II: `C_t (x) I + K^-1 blockdiag(C_{x|t_j})`.
pub fn model2_ybar_cov(inst: &Instance, phi: &DMatrix<f64>) -> DMatrix<f64> {
    let (i, j, k) = (inst.xs.len(), inst.ts.len(), inst.ds.n_trials());
    let st = &inst.state;
    let ct = se_jit(&inst.ts, st.sigma2_t, st.eta_t.exp());
    let mut cov = DMatrix::zeros(i * j, i * j);
    for a in 0..j {
        for b in 0..j {
            for s in 0..i {
                cov[(a * i + s, b * i + s)] = ct[(a, b)];
            }
        }
        let cx = model2_cxt(phi, &st.lambda, a);
        for s in 0..i {
            for r in 0..i {
                cov[(a * i + s, a * i + r)] += cx[(s, r)] / k as f64;
            }
        }
    }
    cov
}

/// Dense Model I prior covariance of `vec(M)`.
pub fn model1_m_cov(inst: &Instance, phi: &DMatrix<f64>) -> DMatrix<f64> {
    let (i, j) = (inst.xs.len(), inst.ts.len());
    let st = &inst.state;
    let ct = se_jit(&inst.ts, st.sigma2_t, st.eta_t.exp());
    DMatrix::from_fn(i * j, i * j, |p, q| {
        let (sa, ja) = (p % i, p / i);
        let (sb, jb) = (q % i, q / i);
        let g: f64 = (0..phi.ncols())
            .map(|l| st.lambda[(ja, l)] * st.lambda[(jb, l)] * phi[(sa, l)] * phi[(sb, l)])
            .sum();
        ct[(ja, jb)] * g
    })
}

/// Joint covariance of all `K I J` observations.
fn stacked(inst: &Instance) -> DVector<f64> {
    let mut y = Vec::new();
    for t in inst.ds.trials() {
        y.extend_from_slice(t.as_slice());
    }
    DVector::from_vec(y)
}

fn joint_cov(m_cov: &DMatrix<f64>, noise: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = m_cov.nrows();
    let mut cov = DMatrix::zeros(k * n, k * n);
    for a in 0..k {
        for b in 0..k {
            let mut blk = m_cov.clone();
            if a == b {
                blk += noise;
            }
            cov.view_mut((a * n, b * n), (n, n)).copy_from(&blk);
        }
    }
    cov
}

/// Dense marginal log-likelihood shifted to the library's constant
/// convention (drops `(IJ/2) log K + (KIJ/2) log 2 pi`).
pub fn dense_loglik(inst: &Instance, phi: &DMatrix<f64>) -> f64 {
    let (i, j, k) = (inst.xs.len(), inst.ts.len(), inst.ds.n_trials());
    let n = i * j;
    let st = &inst.state;
    let shift = 0.5 * n as f64 * (k as f64).ln() + 0.5 * (k * n) as f64 * (2.0 * std::f64::consts::PI).ln();
    let y = stacked(inst);
    match inst.ctx.model() {
        ModelKind::II if phi.ncols() == i => {
            let ct = se_jit(&inst.ts, st.sigma2_t, st.eta_t.exp());
            let mut m_cov = DMatrix::zeros(n, n);
            let mut noise = DMatrix::zeros(n, n);
            for a in 0..j {
                for b in 0..j {
                    for s in 0..i {
                        m_cov[(a * i + s, b * i + s)] = ct[(a, b)];
                    }
                }
                noise.view_mut((a * i, a * i), (i, i)).copy_from(&model2_cxt(phi, &st.lambda, a));
            }
            gauss_logpdf(&y, &joint_cov(&m_cov, &noise, k)) + shift
        }
        ModelKind::II => {
            // projected likelihood evaluated literally with pseudo-inverses
            let ybar = vecm(&inst.ds.sufficient_stats().ybar_matrix());
            let cstar = model2_ybar_cov(inst, phi);
            let (ld_star, w) = lu_logdet_solve(&cstar, &ybar);
            let mut ll = -0.5 * (ld_star + ybar.dot(&w));
            if k > 1 {
                let ybm = inst.ds.sufficient_stats().ybar_matrix();
                for a in 0..j {
                    let (pinv, pld) = pseudo(&model2_cxt(phi, &st.lambda, a), 1e-10);
                    ll -= 0.5 * (k - 1) as f64 * pld;
                    for t in inst.ds.trials() {
                        let d = t.column(a) - ybm.column(a);
                        ll -= 0.5 * (d.transpose() * &pinv * &d)[(0, 0)];
                    }
                }
            }
            ll
        }
        ModelKind::I => {
            let m_cov = model1_m_cov(inst, phi);
            let noise = DMatrix::identity(n, n) * st.sigma2_eps;
            gauss_logpdf(&y, &joint_cov(&m_cov, &noise, k)) + shift
        }
    }
}

/// Dense hyperprior and `Lambda` prior terms in the library's convention.
pub fn dense_prior(inst: &Instance) -> f64 {
    let p = inst.ctx.prior();
    let st = &inst.state;
    let ig = |s: f64, a: f64, b: f64| -(a + 1.0) * s.ln() - b / s;
    let nm = |e: f64, m: f64, v: f64| -0.5 * (e - m).powi(2) / v;
    let mut acc = ig(st.sigma2_t, p.a[1], p.b[1]) + ig(st.sigma2_u, p.a[2], p.b[2]);
    if p.model == ModelKind::I {
        acc += ig(st.sigma2_eps, p.a[0], p.b[0]);
    }
    acc += nm(st.eta_x, p.m[0], p.v[0]) + nm(st.eta_t, p.m[1], p.v[1]) + nm(st.eta_u, p.m[2], p.v[2]);
    let (j, l) = st.u.shape();
    let cu = se_jit(&inst.ts, 1.0, st.eta_u.exp()) * st.sigma2_u;
    let gamma = decay_weights(p.kappa, l);
    for c in 0..l {
        acc += gauss_logpdf(&st.u.column(c).into_owned(), &cu) + 0.5 * j as f64 * (2.0 * std::f64::consts::PI).ln();
    }
    acc - j as f64 * gamma.iter().map(|g| g.ln()).sum::<f64>()
}

/// Max relative disagreement of `logpost` with the dense evaluation over
/// `n` random instances of `model`.
pub fn logpost_oracle_max_err(model: ModelKind, n: usize, seed: u64, full_rank: bool) -> f64 {
    let mut rng = RngState::new(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let inst = random_instance(&mut rng, model, 5, 5, 4, full_rank);
        let (phi, _) = dense_basis(&inst.xs, inst.state.eta_x, inst.ctx.truncation());
        let oracle = dense_loglik(&inst, &phi) + dense_prior(&inst);
        let got = stgp::inference::logpost(&inst.state, &inst.ctx);
        worst = worst.max(rel_err(got, oracle));
    }
    worst
}

pub fn random_orthonormal(rng: &mut RngState, i: usize, l: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(i, l, |_, _| rng.normal());
    a.qr().q()
}

fn vec_rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

/// Worst relative errors `(inverse_apply, logdet, posterior mean/cov)` of
/// the structured Model II algebra against dense matrices.
pub fn kronalg_oracle_max_err(n: usize, seed: u64) -> (f64, f64, f64) {
    use stgp::kronalg::{m2_inverse_apply, m2_logdet, m2_posterior_mean_cov_apply, Model2Marginal};
    let mut rng = RngState::new(seed, 1);
    let (mut e_inv, mut e_ld, mut e_post) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let i = usize_in(&mut rng, 1, 8);
        let j = usize_in(&mut rng, 1, 6);
        let l = usize_in(&mut rng, 1, i);
        let k = usize_in(&mut rng, 1, 5);
        let ts = sorted_points(&mut rng, j, 0.0, 1.0);
        let ct = se_jit(&ts, uniform(&mut rng, 0.3, 2.0), uniform(&mut rng, 0.1, 0.5)) + DMatrix::identity(j, j) * 1e-3;
        let phi = random_orthonormal(&mut rng, i, l);
        let lambda2 = DMatrix::from_fn(j, l, |_, _| uniform(&mut rng, 0.05, 2.0));
        let m = Model2Marginal::from_lambda2(ct.clone(), phi.clone(), lambda2.clone(), k).unwrap();
        let nn = i * j;
        let mut cm = DMatrix::zeros(nn, nn);
        let mut cstar = DMatrix::zeros(nn, nn);
        for a in 0..j {
            for b in 0..j {
                for s in 0..i {
                    cm[(a * i + s, b * i + s)] = ct[(a, b)];
                }
            }
            let l2 = lambda2.row(a).transpose();
            let cx = scale_columns(&phi, &l2) * phi.transpose() / k as f64;
            cstar.view_mut((a * i, a * i), (i, i)).copy_from(&cx);
        }
        cstar += &cm;
        let v = DVector::from_fn(nn, |_, _| rng.normal());
        let (ld, w) = lu_logdet_solve(&cstar, &v);
        e_inv = e_inv.max(vec_rel(&m2_inverse_apply(&m, &v).unwrap(), &w));
        e_ld = e_ld.max(rel_err(m2_logdet(&m), ld));
        let post = m2_posterior_mean_cov_apply(&m, &v).unwrap();
        let mean = &cm * &w;
        e_post = e_post.max(vec_rel(&post.mean, &mean));
        let inv = cstar.clone().lu().try_inverse().unwrap();
        let cov = &cm - &cm * inv * &cm;
        let z = DVector::from_fn(nn, |_, _| rng.normal());
        e_post = e_post.max(vec_rel(&post.cov_apply(&z).unwrap(), &(&cov * &z)));
    }
    (e_inv, e_ld, e_post)
}

/// Dense conditional-Gaussian `(m', C')` of the mean function at `(x*, t*)`.
pub fn dense_mean_prediction(inst: &Instance, x: f64, t: f64) -> (f64, f64) {
    let (i, j, k) = (inst.xs.len(), inst.ts.len(), inst.ds.n_trials());
    let st = &inst.state;
    let l = inst.ctx.truncation();
    let (phi, vals) = dense_basis(&inst.xs, st.eta_x, l);
    let ybar = vecm(&inst.ds.sufficient_stats().ybar_matrix());
    let nug_t = |a: f64, b: f64| if a == b { JIT } else { 0.0 };
    let ct_star: Vec<f64> = inst.ts.iter().map(|&tj| se(&[t], &[tj], st.sigma2_t, st.eta_t.exp())[(0, 0)] + nug_t(t, tj)).collect();
    let prior_t = st.sigma2_t + JIT;
    let mut c = DVector::zeros(i * j);
    let (cov, prior) = match inst.ctx.model() {
        ModelKind::II => {
            let Some(site) = inst.xs.iter().position(|&v| v == x) else {
                return (0.0, prior_t);
            };
            for jj in 0..j {
                c[jj * i + site] = ct_star[jj];
            }
            (model2_ybar_cov(inst, &phi), prior_t)
        }
        ModelKind::I => {
            let phi_star = match inst.xs.iter().position(|&v| v == x) {
                Some(site) => phi.row(site).transpose(),
                None => {
                    let kx = se(&[x], &inst.xs, 1.0, st.eta_x.exp());
                    (kx * &phi).transpose().component_div(&vals)
                }
            };
            let cu = se_jit(&inst.ts, 1.0, st.eta_u.exp());
            let mut cross = se(&[t], &inst.ts, 1.0, st.eta_u.exp());
            for (jj, &tj) in inst.ts.iter().enumerate() {
                if tj == t {
                    cross[(0, jj)] += JIT;
                }
            }
            let w = cu.lu().solve(&cross.transpose()).unwrap();
            let lam_star = st.lambda.transpose() * w.column(0);
            let g_star = phi_star.component_mul(&lam_star);
            for jj in 0..j {
                for s in 0..i {
                    let g: f64 = (0..l).map(|q| phi[(s, q)] * st.lambda[(jj, q)] * g_star[q]).sum();
                    c[jj * i + s] = ct_star[jj] * g;
                }
            }
            let cov = model1_m_cov(inst, &phi) + DMatrix::identity(i * j, i * j) * (st.sigma2_eps / k as f64);
            (cov, g_star.norm_squared() * prior_t)
        }
    };
    let w = cov.lu().solve(&c).unwrap();
    (w.dot(&ybar), prior - c.dot(&w))
}

/// Dense `C_{x|t*}` from the GP-conditional `lambda(t*)`.
pub fn dense_tesd_future(inst: &Instance, t: f64) -> DMatrix<f64> {
    let st = &inst.state;
    let (phi, _) = dense_basis(&inst.xs, st.eta_x, inst.ctx.truncation());
    let cu = se_jit(&inst.ts, 1.0, st.eta_u.exp());
    let mut cross = se(&[t], &inst.ts, 1.0, st.eta_u.exp());
    for (jj, &tj) in inst.ts.iter().enumerate() {
        if tj == t {
            cross[(0, jj)] += JIT;
        }
    }
    let w = cu.lu().solve(&cross.transpose()).unwrap();
    let lam = st.lambda.transpose() * w.column(0);
    scale_columns(&phi, &lam.map(|v| v * v)) * phi.transpose()
}

/// Dense `C_{x|t_j}(x_i, x*)` (`I x J`) via the Nystrom extension.
pub fn dense_tesd_neighbor(inst: &Instance, x: f64) -> DMatrix<f64> {
    let st = &inst.state;
    let (phi, vals) = dense_basis(&inst.xs, st.eta_x, inst.ctx.truncation());
    let phi_star = match inst.xs.iter().position(|&v| v == x) {
        Some(site) => phi.row(site).transpose(),
        None => (se(&[x], &inst.xs, 1.0, st.eta_x.exp()) * &phi).transpose().component_div(&vals),
    };
    let mut out = DMatrix::zeros(inst.xs.len(), inst.ts.len());
    for jj in 0..inst.ts.len() {
        let coef = st.lambda.row(jj).transpose().map(|v| v * v).component_mul(&phi_star);
        out.set_column(jj, &(&phi * coef));
    }
    out
}

/// Worst errors of the prediction routines against the dense oracles:
/// `(mean, tesd_future, tesd_neighbor, training-time reproduction,
/// training-location reproduction)`.
pub fn predict_oracle_max_err(n: usize, seed: u64) -> [f64; 5] {
    use stgp::predict::{predict_mean_draw, tesd_future_draw, tesd_neighbor_draw};
    let mut rng = RngState::new(seed, 2);
    let mut worst = [0.0f64; 5];
    for it in 0..n {
        let model = if it % 2 == 0 { ModelKind::II } else { ModelKind::I };
        let inst = random_instance(&mut rng, model, 5, 5, 3, false);
        let st = &inst.state;
        let (xi, tj) = (usize_in(&mut rng, 0, inst.xs.len() - 1), usize_in(&mut rng, 0, inst.ts.len() - 1));
        let x_off = uniform(&mut rng, -1.2, 1.2);
        let t_off = uniform(&mut rng, -0.2, 1.3);
        let mut targets = vec![(inst.xs[xi], inst.ts[tj]), (inst.xs[xi], t_off)];
        if model == ModelKind::I {
            targets.push((x_off, t_off));
        }
        for (x, t) in targets {
            let (m, v) = predict_mean_draw(&inst.ctx, st, &[x], t).unwrap();
            let (mo, vo) = dense_mean_prediction(&inst, x, t);
            worst[0] = worst[0].max((m - mo).abs() / mo.abs().max(1.0));
            worst[0] = worst[0].max((v - vo.max(0.0)).abs() / vo.abs().max(1.0));
        }
        let fut = tesd_future_draw(&inst.ctx, st, t_off, false).unwrap();
        worst[1] = worst[1].max(max_rel_err(&fut, &dense_tesd_future(&inst, t_off)));
        let (nb, _) = tesd_neighbor_draw(&inst.ctx, st, &[x_off]).unwrap();
        let nbo = dense_tesd_neighbor(&inst, x_off);
        if nbo.amax() > 1e-6 {
            worst[2] = worst[2].max(max_rel_err(&nb, &nbo));
        }
        let (phi, _) = dense_basis(&inst.xs, st.eta_x, inst.ctx.truncation());
        let fitted = model2_cxt(&phi, &st.lambda, tj);
        let at_train = tesd_future_draw(&inst.ctx, st, inst.ts[tj], false).unwrap();
        worst[3] = worst[3].max(max_rel_err(&at_train, &fitted));
        let (col, _) = tesd_neighbor_draw(&inst.ctx, st, &[inst.xs[xi]]).unwrap();
        for jj in 0..inst.ts.len() {
            let fit_col = model2_cxt(&phi, &st.lambda, jj).column(xi).into_owned();
            worst[4] = worst[4].max((col.column(jj) - &fit_col).amax() / fitted.amax().max(1e-300));
        }
    }
    worst
}
