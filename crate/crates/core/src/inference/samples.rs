use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gibbs::SamplerCounters;
use super::{HyperState, PriorConfig};
use crate::error::{Error, Result};
use crate::kernels::decay_weights;
use crate::scalar::Scalar;
use crate::stdata::io::write_atomic;

/// One retained MCMC draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw<T: Scalar> {
    pub state: HyperState<T>,
    pub m: Option<DVector<T>>,
    pub logpost: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub sample_m: bool,
    pub n_space: usize,
    pub n_time: usize,
    pub n_trials: usize,
    pub n_draws: usize,
    pub prior: PriorConfig,
    pub counters: SamplerCounters,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples<T: Scalar> {
    pub draws: Vec<Draw<T>>,
    pub meta: RunMeta,
}

const HYPER_HEADER: &str = "draw,sigma2_eps,sigma2_t,sigma2_u,eta_x,eta_t,eta_u,logpost";

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::InvalidData(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl<T: Scalar> PosteriorSamples<T> {
    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    /// Writes `meta.json`, `hyper.csv`, `lambda.bin` and, when present, `m.bin`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        write_atomic(&dir.join("meta.json"), meta.as_bytes())?;

        let mut csv = String::from(HYPER_HEADER);
        csv.push('\n');
        let mut lambda = Vec::new();
        let mut m = Vec::new();
        for (d, draw) in self.draws.iter().enumerate() {
            let s = &draw.state;
            let vals = [s.sigma2_eps, s.sigma2_t, s.sigma2_u, s.eta_x, s.eta_t, s.eta_u, draw.logpost];
            write!(csv, "{d}").expect("string write");
            for v in vals {
                write!(csv, ",{:e}", v.as_f64()).expect("string write");
            }
            csv.push('\n');
            for jj in 0..s.lambda.nrows() {
                for l in 0..s.lambda.ncols() {
                    push_f64(&mut lambda, s.lambda[(jj, l)].as_f64());
                }
            }
            if let Some(mv) = &draw.m {
                mv.iter().for_each(|v| push_f64(&mut m, v.as_f64()));
            }
        }
        write_atomic(&dir.join("hyper.csv"), csv.as_bytes())?;
        write_atomic(&dir.join("lambda.bin"), &lambda)?;
        if self.meta.sample_m {
            write_atomic(&dir.join("m.bin"), &m)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: RunMeta = serde_json::from_str(&text)?;
        let hyper_path = dir.join("hyper.csv");
        let hyper = std::fs::read_to_string(&hyper_path).map_err(|e| Error::io(&hyper_path, e))?;
        let (j, l) = (meta.n_time, meta.prior.truncation);
        let lambda = read_f64s(&dir.join("lambda.bin"), meta.n_draws * j * l)?;
        let n = meta.n_space * meta.n_time;
        let m = if meta.sample_m {
            Some(read_f64s(&dir.join("m.bin"), meta.n_draws * n)?)
        } else {
            None
        };
        let gamma = decay_weights(T::lit(meta.prior.kappa), l);
        let mut draws = Vec::with_capacity(meta.n_draws);
        let mut lines = hyper.lines();
        if lines.next() != Some(HYPER_HEADER) {
            return Err(Error::Parse {
                row: 1,
                msg: "unexpected hyper.csv header".into(),
            });
        }
        for (d, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    row: d + 2,
                    msg: e.to_string(),
                })?;
            if vals.len() != 7 || d >= meta.n_draws {
                return Err(Error::Parse {
                    row: d + 2,
                    msg: "malformed draw row".into(),
                });
            }
            let off = d * j * l;
            let lam = DMatrix::from_fn(j, l, |jj, ll| T::lit(lambda[off + jj * l + ll]));
            let u = DMatrix::from_fn(j, l, |jj, ll| lam[(jj, ll)] / gamma[ll]);
            let t = |k: usize| T::lit(vals[k]);
            draws.push(Draw {
                state: HyperState {
                    sigma2_eps: t(0),
                    sigma2_t: t(1),
                    sigma2_u: t(2),
                    eta_x: t(3),
                    eta_t: t(4),
                    eta_u: t(5),
                    u,
                    lambda: lam,
                },
                m: m.as_ref().map(|mv| DVector::from_fn(n, |r, _| T::lit(mv[d * n + r]))),
                logpost: t(6),
            });
        }
        if draws.len() != meta.n_draws {
            return Err(Error::InvalidData(format!(
                "hyper.csv has {} draws, meta.json says {}",
                draws.len(),
                meta.n_draws
            )));
        }
        Ok(PosteriorSamples { draws, meta })
    }
}
