//! Dataset serialization.
//!
//! CSV layout:
//!
//! ```text
//! # I=<I> J=<J> K=<K> d=<d>
//! # x=<x_1>;<x_2>;...;<x_I>      (coordinates of one point separated by spaces)
//! # t=<t_1>,<t_2>,...,<t_J>
//! <I rows of J comma-separated values>   trial 1
//! <blank line>
//! <I rows of J comma-separated values>   trial 2
//! ...
//! ```
//!
//! The `# x=` and `# t=` lines are optional on input; without them the grid
//! defaults to `x_i = i - 1` (d = 1 only) and `t_j = j - 1`.
//!
//! Binary layout (all little-endian): eight `u64` header words
//! `[magic, version, I, J, K, d, flags, 0]`, then the `K` trials in order,
//! each as `I*J` column-major `f64`. When `flags & 1` is set, the spatial
//! coordinates (`I*d`, point-major) and the `J` times follow the trials.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{SpaceGrid, SpatioTemporalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: u64 = u64::from_le_bytes(*b"STGPDATA");
const VERSION: u64 = 1;
const FLAG_GRID: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Binary,
}

impl DataFormat {
    /// Guesses the format from a file extension (`.csv` or anything else).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Binary,
        }
    }
}

pub fn save_dataset<T: Scalar>(
    ds: &SpatioTemporalDataset<T>,
    path: &Path,
    format: DataFormat,
) -> Result<()> {
    let bytes = match format {
        DataFormat::Csv => encode_csv(ds).into_bytes(),
        DataFormat::Binary => encode_binary(ds),
    };
    write_atomic(path, &bytes)
}

pub fn load_dataset<T: Scalar>(path: &Path, format: DataFormat) -> Result<SpatioTemporalDataset<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
                row: 0,
                msg: "file is not valid UTF-8".into(),
            })?;
            decode_csv(&text)
        }
        DataFormat::Binary => decode_binary(&bytes),
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let res = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn encode_csv<T: Scalar>(ds: &SpatioTemporalDataset<T>) -> String {
    let (ni, nj, nk, d) = (ds.n_space(), ds.n_time(), ds.n_trials(), ds.space().dim());
    let mut out = format!("# I={ni} J={nj} K={nk} d={d}\n# x=");
    let pts: Vec<String> = ds
        .space()
        .points()
        .map(|p| p.iter().map(|c| fmt_f64(c.as_f64())).collect::<Vec<_>>().join(" "))
        .collect();
    out.push_str(&pts.join(";"));
    out.push_str("\n# t=");
    let ts: Vec<String> = ds.time().times().iter().map(|t| fmt_f64(t.as_f64())).collect();
    out.push_str(&ts.join(","));
    out.push('\n');
    for (k, y) in ds.trials().iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        for i in 0..ni {
            let row: Vec<String> = (0..nj).map(|j| fmt_f64(y[(i, j)].as_f64())).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

fn parse_err(row: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        row,
        msg: msg.into(),
    }
}

fn parse_num<T: Scalar>(s: &str, row: usize) -> Result<T> {
    s.trim()
        .parse::<f64>()
        .map(T::lit)
        .map_err(|_| parse_err(row, format!("cannot parse {:?} as a number", s.trim())))
}

fn parse_header(line: &str) -> Result<[usize; 4]> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| parse_err(1, "missing '# I=.. J=.. K=.. d=..' header"))?;
    let mut vals = [None; 4];
    for tok in body.split_whitespace() {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed header token {tok:?}")))?;
        let slot = match key {
            "I" => 0,
            "J" => 1,
            "K" => 2,
            "d" => 3,
            _ => return Err(parse_err(1, format!("unknown header key {key:?}"))),
        };
        vals[slot] = Some(
            val.parse::<usize>()
                .map_err(|_| parse_err(1, format!("header value {val:?} is not an integer")))?,
        );
    }
    let mut out = [0; 4];
    for (o, (v, name)) in out.iter_mut().zip(vals.iter().zip(["I", "J", "K", "d"])) {
        *o = v.ok_or_else(|| parse_err(1, format!("header missing {name}")))?;
    }
    if out[2] == 0 {
        return Err(Error::InvalidData("K must be ≥ 1".into()));
    }
    if out[0] == 0 || out[1] == 0 || out[3] == 0 {
        return Err(parse_err(1, "I, J and d must be positive"));
    }
    Ok(out)
}

fn decode_csv<T: Scalar>(text: &str) -> Result<SpatioTemporalDataset<T>> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l)).peekable();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let [ni, nj, nk, d] = parse_header(header)?;

    let mut coords: Option<Vec<T>> = None;
    let mut times: Option<Vec<T>> = None;
    while let Some(&(row, line)) = lines.peek() {
        let Some(body) = line.strip_prefix('#') else { break };
        let body = body.trim();
        if let Some(xs) = body.strip_prefix("x=") {
            let mut c = Vec::with_capacity(ni * d);
            for p in xs.split(';') {
                let vals: Vec<&str> = p.split_whitespace().collect();
                if vals.len() != d {
                    return Err(parse_err(row, format!("point {p:?} does not have d={d} coordinates")));
                }
                for v in vals {
                    c.push(parse_num(v, row)?);
                }
            }
            if c.len() != ni * d {
                return Err(parse_err(row, format!("expected {ni} spatial points")));
            }
            coords = Some(c);
        } else if let Some(ts) = body.strip_prefix("t=") {
            let t = ts.split(',').map(|v| parse_num(v, row)).collect::<Result<Vec<T>>>()?;
            if t.len() != nj {
                return Err(parse_err(row, format!("expected {nj} times, found {}", t.len())));
            }
            times = Some(t);
        } else {
            return Err(parse_err(row, "unknown comment line"));
        }
        lines.next();
    }

    let mut trials = Vec::with_capacity(nk);
    for k in 0..nk {
        if k > 0 {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => {}
                Some((row, _)) => return Err(parse_err(row, "expected blank line between trials")),
                None => return Err(parse_err(0, format!("file ends before trial {}", k + 1))),
            }
        }
        let mut y = DMatrix::<T>::zeros(ni, nj);
        for i in 0..ni {
            let (row, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("file ends inside trial {}", k + 1)))?;
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != nj {
                return Err(parse_err(row, format!("expected J={nj} columns, found {}", vals.len())));
            }
            for (j, v) in vals.into_iter().enumerate() {
                y[(i, j)] = parse_num(v, row)?;
            }
        }
        trials.push(y);
    }
    if let Some((row, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(row, format!("unexpected trailing content {:?}", l.trim())));
    }

    let space = match coords {
        Some(c) => SpaceGrid::from_flat(c, d)?,
        None if d == 1 => SpaceGrid::from_flat((0..ni).map(|i| T::lit(i as f64)).collect(), 1)?,
        None => return Err(parse_err(2, "d > 1 requires a '# x=' coordinate line")),
    };
    let time = match times {
        Some(t) => TimeGrid::new(t)?,
        None => TimeGrid::new((0..nj).map(|j| T::lit(j as f64)).collect())?,
    };
    SpatioTemporalDataset::new(space, time, trials)
}

fn encode_binary<T: Scalar>(ds: &SpatioTemporalDataset<T>) -> Vec<u8> {
    let (ni, nj, nk, d) = (ds.n_space(), ds.n_time(), ds.n_trials(), ds.space().dim());
    let n_vals = nk * ni * nj + ni * d + nj;
    let mut out = Vec::with_capacity(64 + 8 * n_vals);
    for w in [MAGIC, VERSION, ni as u64, nj as u64, nk as u64, d as u64, FLAG_GRID, 0] {
        out.extend_from_slice(&w.to_le_bytes());
    }
    let vals = ds
        .trials()
        .iter()
        .flat_map(|y| y.as_slice().iter())
        .chain(ds.space().flat())
        .chain(ds.time().times());
    for v in vals {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

fn decode_binary<T: Scalar>(bytes: &[u8]) -> Result<SpatioTemporalDataset<T>> {
    if bytes.len() < 64 {
        return Err(parse_err(0, "binary header truncated"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    if word(0) != MAGIC {
        return Err(parse_err(0, "bad magic number"));
    }
    if word(1) != VERSION {
        return Err(parse_err(0, format!("unsupported version {}", word(1))));
    }
    let to_usize = |w: u64| usize::try_from(w).map_err(|_| parse_err(0, "header value too large"));
    let (ni, nj, nk, d) = (to_usize(word(2))?, to_usize(word(3))?, to_usize(word(4))?, to_usize(word(5))?);
    let flags = word(6);
    if nk == 0 {
        return Err(Error::InvalidData("K must be ≥ 1".into()));
    }
    if ni == 0 || nj == 0 || d == 0 {
        return Err(parse_err(0, "I, J and d must be positive"));
    }
    let grid_vals = if flags & FLAG_GRID != 0 { ni * d + nj } else { 0 };
    let n_vals = nk
        .checked_mul(ni)
        .and_then(|v| v.checked_mul(nj))
        .and_then(|v| v.checked_add(grid_vals))
        .ok_or_else(|| parse_err(0, "header sizes overflow"))?;
    let payload = &bytes[64..];
    if payload.len() != 8 * n_vals {
        return Err(parse_err(
            0,
            format!("payload holds {} bytes, header implies {}", payload.len(), 8 * n_vals),
        ));
    }
    let mut vals = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    let trials = (0..nk)
        .map(|_| DMatrix::from_iterator(ni, nj, vals.by_ref().take(ni * nj)))
        .collect();
    let (space, time) = if grid_vals > 0 {
        let coords: Vec<T> = vals.by_ref().take(ni * d).collect();
        let times: Vec<T> = vals.collect();
        (SpaceGrid::from_flat(coords, d)?, TimeGrid::new(times)?)
    } else if d == 1 {
        (
            SpaceGrid::from_flat((0..ni).map(|i| T::lit(i as f64)).collect(), 1)?,
            TimeGrid::new((0..nj).map(|j| T::lit(j as f64)).collect())?,
        )
    } else {
        return Err(parse_err(0, "d > 1 requires the grid block"));
    };
    SpatioTemporalDataset::new(space, time, trials)
}
