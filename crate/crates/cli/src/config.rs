//! JSON run configurations, one per command.
//!
//! Relative paths inside a config resolve against the config file's
//! directory. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stgp::inference::{FitRun, PriorConfig};
use stgp::kronalg::DEFAULT_DENSE_CAP;
use stgp::simharness::{ImageDemoParams, SimParams};
use stgp::stdata::DataFormat;
use stgp::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SimSource {
    /// Draws from the closed-form simulation process on `[-1, 1] x [0, 1]`.
    Sim(SimParams),
    /// Lattice image cohorts.
    ImageDemo(ImageDemoParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub source: SimSource,
    #[serde(default = "binary")]
    pub format: DataFormat,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn binary() -> DataFormat {
    DataFormat::Binary
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub dataset: PathBuf,
    /// Guessed from the extension when absent.
    #[serde(default)]
    pub format: Option<DataFormat>,
    pub prior: PriorConfig,
    pub run: FitRun,
    /// Independent chains, run concurrently on disjoint RNG streams.
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub dense_cap: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanTarget {
    pub x: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Targets {
    #[serde(default)]
    pub mean: Vec<MeanTarget>,
    #[serde(default)]
    pub tesd_future: Vec<f64>,
    #[serde(default)]
    pub tesd_neighbor: Vec<Vec<f64>>,
}

impl Targets {
    pub fn is_empty(&self) -> bool {
        self.mean.is_empty() && self.tesd_future.is_empty() && self.tesd_neighbor.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub format: Option<DataFormat>,
    pub samples: PathBuf,
    #[serde(default)]
    pub targets: Targets,
    /// Adds the conditional variance of `lambda(t*)` to future-time TESD.
    #[serde(default)]
    pub add_variance: bool,
    #[serde(default)]
    pub dense_cap: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub quantile: f64,
    /// Time indices to threshold; all times when absent.
    #[serde(default)]
    pub times: Option<Vec<usize>>,
}

fn dense_tesd_max() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizeConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub format: Option<DataFormat>,
    pub samples: PathBuf,
    /// Location pairs with credible bands; every pair when absent and `I` is small.
    #[serde(default)]
    pub bands: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub connection_graph: Option<GraphConfig>,
    /// `SimParams` JSON written by `simulate`, for scoring against the truth.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    /// Largest `I` for which full TESD matrices are written.
    #[serde(default = "dense_tesd_max")]
    pub dense_tesd_max: usize,
    #[serde(default)]
    pub dense_cap: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSize {
    #[serde(rename = "I")]
    pub i: usize,
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

fn repeats() -> usize {
    3
}

fn default_dense_cap() -> usize {
    DEFAULT_DENSE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<BenchSize>,
    #[serde(default = "repeats")]
    pub repeats: usize,
    /// Largest `I * J` for which the dense path runs.
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Reads and validates a config file.
pub fn load<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Domain(format!("config {}: {e}", path.display())))
}

/// `p` relative to `base` unless already absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
