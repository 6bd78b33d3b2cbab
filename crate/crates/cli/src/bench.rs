//! Wall time and peak allocation of the structured Model II marginal
//! against the dense `IJ x IJ` Cholesky route.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use stgp::kernels::{decay_weights, mercer_basis, stationary_kernel, StationaryKernelParams};
use stgp::kronalg::Model2Marginal;
use stgp::linalg::{chol_logdet, cholesky};
use stgp::samplers::RngState;
use stgp::stdata::{SpaceGrid, TimeGrid};
use stgp::{Error, Result};

use crate::commands::Invocation;
use crate::config::{self, BenchConfig, BenchSize};

/// Sizes with `I * J` below this are exempt from the speed assertion:
/// fixed per-call overhead dominates there.
const ASSERT_MIN_SIZE: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    #[serde(flatten)]
    pub size: BenchSize,
    pub m2_structured_ms: f64,
    pub m2_structured_ms_sd: f64,
    pub m2_structured_peak_bytes: Option<usize>,
    pub dense_oracle_ms: Option<f64>,
    pub dense_oracle_ms_sd: Option<f64>,
    pub dense_oracle_peak_bytes: Option<usize>,
    pub ratio: Option<f64>,
    pub dense_skipped: bool,
    /// Relative disagreement of `log det` and `y^T C*^-1 y` between the paths.
    pub max_rel_diff: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub repeats: usize,
    /// Size the speed assertion was checked at, if any.
    pub asserted_at: Option<BenchSize>,
    pub structured_not_slower: Option<bool>,
}

struct Instance {
    c_t: DMatrix<f64>,
    phi: DMatrix<f64>,
    lambda2: DMatrix<f64>,
    k: usize,
    y: DVector<f64>,
}

fn instance(s: BenchSize, rng: &mut RngState) -> Result<Instance> {
    if s.i == 0 || s.j == 0 || s.k == 0 || s.l == 0 || s.l > s.i {
        return Err(Error::Domain(format!("bench size {s:?} needs I, J, K >= 1 and 1 <= L <= I")));
    }
    let xs: Vec<f64> = (0..s.i).map(|a| -1.0 + 2.0 * a as f64 / (s.i.max(2) - 1) as f64).collect();
    let cx = stationary_kernel(&SpaceGrid::line(&xs)?, &StationaryKernelParams::new(1.0, 0.5)?)?;
    let phi = mercer_basis(&cx, s.l)?.phi;
    let mut c_t = stationary_kernel(&TimeGrid::<f64>::uniform(s.j, 1.0)?, &StationaryKernelParams::new(1.0, 0.3)?)?;
    for d in 0..s.j {
        c_t[(d, d)] += 1e-6;
    }
    let gamma = decay_weights(2.0, s.l);
    let lambda2 = DMatrix::from_fn(s.j, s.l, |_, l| (0.5 + rng.uniform()) * gamma[l] * gamma[l]);
    let y = rng.normal_vec(s.i * s.j);
    Ok(Instance { c_t, phi, lambda2, k: s.k, y })
}

fn structured(inst: &Instance) -> Result<(f64, f64)> {
    let m = Model2Marginal::from_lambda2(inst.c_t.clone(), inst.phi.clone(), inst.lambda2.clone(), inst.k)?;
    let x = m.inverse_apply(&inst.y)?;
    Ok((m.logdet(), inst.y.dot(&x)))
}

fn dense(inst: &Instance) -> Result<(f64, f64)> {
    let (i, j) = (inst.phi.nrows(), inst.c_t.nrows());
    let mut c = DMatrix::<f64>::zeros(i * j, i * j);
    for a in 0..j {
        for b in 0..j {
            for d in 0..i {
                c[(a * i + d, b * i + d)] = inst.c_t[(a, b)];
            }
        }
        let mut g = inst.phi.clone();
        for (mut col, &w) in g.column_iter_mut().zip(inst.lambda2.row(a).iter()) {
            col *= w / inst.k as f64;
        }
        let block = g * inst.phi.transpose();
        let mut v = c.view_mut((a * i, a * i), (i, i));
        v += block;
    }
    let chol = cholesky(c, "dense Model II marginal")?;
    let x = chol.solve(&inst.y);
    Ok((chol_logdet(&chol), inst.y.dot(&x)))
}

/// Median and standard deviation of `repeats` timings in milliseconds,
/// plus the peak extra allocation of the first run and its result.
fn time_it(repeats: usize, f: impl Fn() -> Result<(f64, f64)>) -> Result<(f64, f64, Option<usize>, (f64, f64))> {
    let (first, peak) = crate::alloc::measure(&f);
    let value = first?;
    let mut ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        f()?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    let med = ms[ms.len() / 2];
    let (_, var) = stgp::diagnostics::mean_var(&ms);
    let peak = crate::alloc::is_active().then_some(peak);
    Ok((med, var.sqrt(), peak, value))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.sizes.is_empty() || cfg.repeats == 0 {
        return Err(Error::Domain("bench needs at least one size and repeats >= 1".into()));
    }
    let mut rng = RngState::new(cfg.seed, 0);
    let mut rows = Vec::with_capacity(cfg.sizes.len());
    for &size in &cfg.sizes {
        let inst = instance(size, &mut rng)?;
        let (s_ms, s_sd, s_peak, s_val) = time_it(cfg.repeats, || structured(&inst))?;
        let skipped = size.i * size.j > cfg.dense_cap;
        let mut row = BenchRow {
            size,
            m2_structured_ms: s_ms,
            m2_structured_ms_sd: s_sd,
            m2_structured_peak_bytes: s_peak,
            dense_oracle_ms: None,
            dense_oracle_ms_sd: None,
            dense_oracle_peak_bytes: None,
            ratio: None,
            dense_skipped: skipped,
            max_rel_diff: None,
        };
        if !skipped {
            let (d_ms, d_sd, d_peak, d_val) = time_it(cfg.repeats, || dense(&inst))?;
            row.dense_oracle_ms = Some(d_ms);
            row.dense_oracle_ms_sd = Some(d_sd);
            row.dense_oracle_peak_bytes = d_peak;
            row.ratio = Some(s_ms / d_ms);
            row.max_rel_diff = Some(rel(s_val.0, d_val.0).max(rel(s_val.1, d_val.1)));
        }
        rows.push(row);
    }
    let largest = rows
        .iter()
        .filter(|r| !r.dense_skipped)
        .max_by_key(|r| r.size.i * r.size.j)
        .filter(|r| r.size.i * r.size.j >= ASSERT_MIN_SIZE);
    let asserted_at = largest.map(|r| r.size);
    let structured_not_slower = largest.map(|r| r.m2_structured_ms <= r.dense_oracle_ms.unwrap_or(f64::INFINITY));
    Ok(BenchReport {
        rows,
        repeats: cfg.repeats,
        asserted_at,
        structured_not_slower,
    })
}

/// Runs the benchmark and writes `bench.json`; fails when the structured
/// path is slower than the dense one at the largest asserted size.
pub fn bench(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let mut cfg: BenchConfig = config::load(&inv.config)?;
    if let Some(s) = inv.seed {
        cfg.seed = s;
    }
    let report = run(&cfg)?;
    let out = inv.out_dir(&cfg.out_dir)?;
    let path = out.join("bench.json");
    crate::commands::write_json(&path, &report)?;
    if report.structured_not_slower == Some(false) {
        return Err(Error::Numerical(format!(
            "structured path slower than dense at {:?}; see {}",
            report.asserted_at.expect("asserted size"),
            path.display()
        )));
    }
    Ok(vec![path])
}
