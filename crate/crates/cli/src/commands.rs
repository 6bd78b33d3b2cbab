//! The five batch commands. Each reads one config, writes its artifacts
//! atomically under the output directory and returns the paths written.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use stgp::diagnostics::{ess, mean_var, quantile};
use stgp::inference::{
    estimate_tesd, fit_chain, ModelContext, ModelKind, PosteriorSamples, SamplerCounters, SpatialKernel,
    TesdOptions,
};
use stgp::kronalg::DEFAULT_DENSE_CAP;
use stgp::predict::{
    predict_mean, predict_tesd_future, predict_tesd_neighbor, write_prediction_csv, PredictionRow,
};
use stgp::simharness::{generate, image_demo, tesd_error, SimParams, TruthOracle};
use stgp::stdata::{load_dataset, save_dataset, write_atomic, DataFormat};
use stgp::{Dataset, Error, Result};

use crate::config::{self, FitConfig, PredictConfig, SimSource, SimulateConfig, SummarizeConfig};
use crate::graph::connection_graph;

/// Command-line overrides shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Invocation {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Invocation {
            config: config.into(),
            ..Default::default()
        }
    }

    fn base(&self) -> PathBuf {
        match self.config.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        config::resolve(&self.base(), p)
    }

    pub(crate) fn out_dir(&self, from_cfg: &Option<PathBuf>) -> Result<PathBuf> {
        let dir = match (&self.out, from_cfg) {
            (Some(o), _) => o.clone(),
            (None, Some(c)) => self.resolve(c),
            (None, None) => self.resolve(Path::new("out")),
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        Ok(dir)
    }
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_data(inv: &Invocation, path: &Path, format: Option<DataFormat>) -> Result<Dataset> {
    let path = inv.resolve(path);
    let format = format.unwrap_or_else(|| DataFormat::from_path(&path));
    load_dataset(&path, format)
}

fn extension(format: DataFormat) -> &'static str {
    match format {
        DataFormat::Csv => "csv",
        DataFormat::Binary => "bin",
    }
}

pub fn simulate(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let cfg: SimulateConfig = config::load(&inv.config)?;
    let out = inv.out_dir(&cfg.out_dir)?;
    let ext = extension(cfg.format);
    let mut written = Vec::new();
    match cfg.source {
        SimSource::Sim(mut p) => {
            if let Some(s) = inv.seed {
                p.seed = s;
            }
            p.validate()?;
            let ds = generate(&p)?;
            let path = out.join(format!("dataset.{ext}"));
            save_dataset(&ds, &path, cfg.format)?;
            written.push(path);
            let truth = out.join("truth.json");
            write_json(&truth, &p)?;
            written.push(truth);
        }
        SimSource::ImageDemo(mut p) => {
            if let Some(s) = inv.seed {
                p.seed = s;
            }
            for (c, ds) in image_demo(&p)?.iter().enumerate() {
                let path = out.join(format!("cohort_{c}.{ext}"));
                save_dataset(ds, &path, cfg.format)?;
                written.push(path);
            }
            let meta = out.join("demo.json");
            write_json(&meta, &p)?;
            written.push(meta);
        }
    }
    Ok(written)
}

/// Summary of a scalar trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub q025: f64,
    pub q975: f64,
    pub first: f64,
    pub last: f64,
    pub ess: f64,
}

pub fn trace_summary(xs: &[f64]) -> Option<TraceSummary> {
    if xs.is_empty() {
        return None;
    }
    let (mean, var) = mean_var(xs);
    Some(TraceSummary {
        mean,
        sd: var.sqrt(),
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        q025: quantile(xs, 0.025),
        q975: quantile(xs, 0.975),
        first: xs[0],
        last: xs[xs.len() - 1],
        ess: if xs.len() >= 4 { ess(xs) } else { xs.len() as f64 },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    pub chain: usize,
    pub dir: String,
    pub seed: u64,
    pub n_draws: usize,
    pub logpost: Option<TraceSummary>,
    pub counters: SamplerCounters,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub n_space: usize,
    pub n_time: usize,
    pub n_trials: usize,
    pub expected_draws: usize,
    pub chains: Vec<ChainReport>,
    pub wall_time_s: f64,
}

/// Returns the report together with the chain directories and report path.
pub fn fit(inv: &Invocation) -> Result<(FitReport, Vec<PathBuf>)> {
    let mut cfg: FitConfig = config::load(&inv.config)?;
    if let Some(s) = inv.seed {
        cfg.run.seed = s;
    }
    cfg.prior.validate()?;
    cfg.run.validate()?;
    if cfg.chains == 0 {
        return Err(Error::Domain("chains must be >= 1".into()));
    }
    let out = inv.out_dir(&cfg.out_dir)?;
    let ds = load_data(inv, &cfg.dataset, cfg.format)?;
    let start = std::time::Instant::now();
    let ctx = ModelContext::with_dense_cap(&ds, cfg.prior.clone(), cfg.dense_cap.unwrap_or(DEFAULT_DENSE_CAP))?;
    let results: Vec<Result<PosteriorSamples<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.chains)
            .map(|c| {
                let (ctx, run) = (&ctx, &cfg.run);
                scope.spawn(move || fit_chain(ctx, run, c as u64))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numerical("chain thread panicked".into()))))
            .collect()
    });
    let mut chains = Vec::with_capacity(cfg.chains);
    for (c, res) in results.into_iter().enumerate() {
        let samples = res?;
        let dir = format!("chain_{c}");
        samples.save(&out.join(&dir))?;
        let lp: Vec<f64> = samples.draws.iter().map(|d| d.logpost).collect();
        chains.push(ChainReport {
            chain: c,
            dir,
            seed: cfg.run.seed,
            n_draws: samples.len(),
            logpost: trace_summary(&lp),
            counters: samples.meta.counters.clone(),
            wall_time_s: samples.meta.wall_time_s,
        });
    }
    let report = FitReport {
        model: cfg.prior.model,
        n_space: ds.n_space(),
        n_time: ds.n_time(),
        n_trials: ds.n_trials(),
        expected_draws: cfg.run.n_draws(),
        chains,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let mut written: Vec<PathBuf> = report.chains.iter().map(|c| out.join(&c.dir)).collect();
    written.push(out.join("report.json"));
    write_json(&written[written.len() - 1], &report)?;
    Ok((report, written))
}

/// Posterior draws together with a context rebuilt from their prior.
fn load_fit(
    inv: &Invocation,
    dataset: &Path,
    format: Option<DataFormat>,
    samples: &Path,
    dense_cap: Option<usize>,
) -> Result<(PosteriorSamples<f64>, ModelContext<f64>)> {
    let ds = load_data(inv, dataset, format)?;
    let samples = PosteriorSamples::<f64>::load(&inv.resolve(samples))?;
    if samples.meta.n_space != ds.n_space() || samples.meta.n_time != ds.n_time() {
        return Err(Error::Domain(format!(
            "samples were fitted on a {}x{} grid, dataset is {}x{}",
            samples.meta.n_space,
            samples.meta.n_time,
            ds.n_space(),
            ds.n_time()
        )));
    }
    let ctx = ModelContext::with_dense_cap(&ds, samples.meta.prior.clone(), dense_cap.unwrap_or(DEFAULT_DENSE_CAP))?;
    Ok((samples, ctx))
}

fn fmt_point(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

fn matrix_rows(values: &DMatrix<f64>, lo: &DMatrix<f64>, hi: &DMatrix<f64>, upper: bool, id: impl Fn(usize, usize) -> String) -> Vec<PredictionRow> {
    let mut rows = Vec::new();
    for a in 0..values.nrows() {
        for b in (if upper { a } else { 0 })..values.ncols() {
            rows.push(PredictionRow {
                id: id(a, b),
                estimate: values[(a, b)],
                lo: lo[(a, b)],
                hi: hi[(a, b)],
            });
        }
    }
    rows
}

pub fn predict(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let cfg: PredictConfig = config::load(&inv.config)?;
    let out = inv.out_dir(&cfg.out_dir)?;
    if cfg.targets.is_empty() {
        return Ok(Vec::new());
    }
    let (samples, ctx) = load_fit(inv, &cfg.dataset, cfg.format, &cfg.samples, cfg.dense_cap)?;
    if ctx.model() == ModelKind::I && !cfg.targets.tesd_neighbor.is_empty() {
        return Err(Error::Unsupported("tesd_neighbor is unsupported for model I".into()));
    }

    let mut files: Vec<(PathBuf, Vec<PredictionRow>)> = Vec::new();
    if !cfg.targets.mean.is_empty() {
        let mut rows = Vec::with_capacity(cfg.targets.mean.len());
        for tg in &cfg.targets.mean {
            let p = predict_mean(&samples, &ctx, &tg.x, tg.t)?;
            rows.push(PredictionRow {
                id: format!("x={};t={:e}", fmt_point(&tg.x), tg.t),
                estimate: p.mean,
                lo: p.lo,
                hi: p.hi,
            });
        }
        files.push((out.join("mean.csv"), rows));
    }
    if !cfg.targets.tesd_future.is_empty() {
        let mut rows = Vec::new();
        for &t in &cfg.targets.tesd_future {
            let p = predict_tesd_future(&samples, &ctx, t, cfg.add_variance)?;
            rows.extend(matrix_rows(&p.values, &p.lo, &p.hi, true, |a, b| format!("t={t:e};a={a};b={b}")));
        }
        files.push((out.join("tesd_future.csv"), rows));
    }
    if !cfg.targets.tesd_neighbor.is_empty() {
        let mut rows = Vec::new();
        for x in &cfg.targets.tesd_neighbor {
            let p = predict_tesd_neighbor(&samples, &ctx, x)?;
            let xs = fmt_point(x);
            rows.extend(matrix_rows(&p.values, &p.lo, &p.hi, false, |i, j| format!("x={xs};i={i};j={j}")));
        }
        files.push((out.join("tesd_neighbor.csv"), rows));
    }
    for (path, rows) in &files {
        write_prediction_csv(path, rows)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[derive(Debug, Clone, Serialize)]
struct HyperSummary {
    model: ModelKind,
    n_draws: usize,
    params: Vec<(String, Option<TraceSummary>)>,
}

#[derive(Debug, Clone, Serialize)]
struct TesdMatrices {
    times: Vec<f64>,
    cov: Vec<Vec<Vec<f64>>>,
    corr: Vec<Vec<Vec<f64>>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Serialize)]
struct GraphAtTime {
    time_index: usize,
    t: f64,
    graph: crate::graph::ConnectionGraph,
}

pub fn summarize(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let cfg: SummarizeConfig = config::load(&inv.config)?;
    if let Some(g) = &cfg.connection_graph {
        if !(g.quantile > 0.0 && g.quantile < 1.0) {
            return Err(Error::Domain(format!("connection_graph.quantile {} must lie in (0, 1)", g.quantile)));
        }
    }
    let out = inv.out_dir(&cfg.out_dir)?;
    let (samples, ctx) = load_fit(inv, &cfg.dataset, cfg.format, &cfg.samples, cfg.dense_cap)?;
    let mut written = Vec::new();

    let model = ctx.model();
    let trace = |f: &dyn Fn(&stgp::inference::Draw<f64>) -> f64| -> Vec<f64> { samples.draws.iter().map(f).collect() };
    let mut params = Vec::new();
    if model == ModelKind::I {
        params.push(("sigma2_eps".to_string(), trace_summary(&trace(&|d| d.state.sigma2_eps))));
    }
    params.push(("sigma2_t".into(), trace_summary(&trace(&|d| d.state.sigma2_t))));
    params.push(("sigma2_u".into(), trace_summary(&trace(&|d| d.state.sigma2_u))));
    params.push(("eta_x".into(), trace_summary(&trace(&|d| d.state.eta_x))));
    params.push(("eta_t".into(), trace_summary(&trace(&|d| d.state.eta_t))));
    params.push(("eta_u".into(), trace_summary(&trace(&|d| d.state.eta_u))));
    params.push(("logpost".into(), trace_summary(&trace(&|d| d.logpost))));
    let path = out.join("summary.json");
    write_json(&path, &HyperSummary { model, n_draws: samples.len(), params })?;
    written.push(path);

    let opts = TesdOptions {
        entries: cfg.bands.clone(),
        ..TesdOptions::default()
    };
    let est = estimate_tesd(&samples, &ctx, &opts)?;
    let times: Vec<f64> = est.times.clone();
    let mut csv = String::from("time_index,t,a,b,mean,lo2.5,hi97.5\n");
    for b in &est.bands {
        csv.push_str(&format!(
            "{},{:e},{},{},{:e},{:e},{:e}\n",
            b.time_index, times[b.time_index], b.a, b.b, b.mean, b.lo, b.hi
        ));
    }
    let path = out.join("tesd_bands.csv");
    write_atomic(&path, csv.as_bytes())?;
    written.push(path);

    if ctx.n_space() <= cfg.dense_tesd_max {
        let m = TesdMatrices {
            times: times.clone(),
            cov: est.cov.iter().map(rows_of).collect(),
            corr: est.corr.iter().map(rows_of).collect(),
        };
        let path = out.join("tesd.json");
        write_json(&path, &m)?;
        written.push(path);
    }

    if let Some(g) = &cfg.connection_graph {
        let shape = match ctx.prior().spatial_kernel {
            SpatialKernel::GraphLaplacian { rows, cols, .. } => Some((rows, cols)),
            SpatialKernel::Stationary => None,
        };
        let idx: Vec<usize> = g.times.clone().unwrap_or_else(|| (0..ctx.n_time()).collect());
        let mut graphs = Vec::with_capacity(idx.len());
        for j in idx {
            let corr = est
                .corr
                .get(j)
                .ok_or_else(|| Error::Domain(format!("connection_graph time index {j} out of range")))?;
            let graph = connection_graph(corr, g.quantile, shape)?;
            let path = out.join(format!("degree_t{j}.csv"));
            write_atomic(&path, graph.to_csv().as_bytes())?;
            written.push(path);
            graphs.push(GraphAtTime {
                time_index: j,
                t: times[j],
                graph,
            });
        }
        let path = out.join("connection_graph.json");
        write_json(&path, &graphs)?;
        written.push(path);
    }

    if let Some(truth) = &cfg.truth {
        let p: SimParams = config::load(&inv.resolve(truth))?;
        if ctx.space().dim() != 1 {
            return Err(Error::Domain("truth scoring needs one-dimensional locations".into()));
        }
        let xs: Vec<f64> = ctx.space().flat().to_vec();
        let err = tesd_error(&est, &TruthOracle::new(p), &xs)?;
        let path = out.join("tesd_error.json");
        write_json(&path, &err)?;
        written.push(path);
    }
    Ok(written)
}

/// Process exit code for a library error: 2 for configuration and usage
/// problems, 3 for capacity violations, 4 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Capacity { .. } => 3,
        Error::Numerical(_) => 4,
        _ => 2,
    }
}
