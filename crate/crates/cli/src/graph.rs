//! Connection graphs from thresholded correlation matrices.

use nalgebra::DMatrix;
use serde::Serialize;
use stgp::{Error, Result};

/// Node degrees of the graph joining locations whose absolute
/// correlation reaches the `quantile` of all absolute entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectionGraph {
    pub quantile: f64,
    pub threshold: f64,
    /// `(rows, cols)` of the grid layout; degrees are stored row-major.
    pub shape: (usize, usize),
    pub degrees: Vec<usize>,
}

impl ConnectionGraph {
    pub fn degree_map(&self) -> DMatrix<usize> {
        DMatrix::from_row_slice(self.shape.0, self.shape.1, &self.degrees)
    }

    /// Degree map as CSV, one grid row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.degrees.chunks(self.shape.1) {
            let cells: Vec<String> = row.iter().map(|d| d.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Thresholds `|corr|` at its `q`-quantile over all `I^2` entries (the
/// diagonal included) and counts each node's neighbours, self-loops
/// excluded. The quantile is the lower order statistic at `q (n - 1)`.
/// Entries of magnitude zero never form edges.
pub fn connection_graph(corr: &DMatrix<f64>, q: f64, shape: Option<(usize, usize)>) -> Result<ConnectionGraph> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile {q} must lie in (0, 1)")));
    }
    let n = corr.nrows();
    if n == 0 || !corr.is_square() {
        return Err(Error::Domain("correlation matrix must be square and non-empty".into()));
    }
    let shape = shape.unwrap_or((1, n));
    if shape.0 * shape.1 != n {
        return Err(Error::Domain(format!("grid {}x{} does not hold {n} nodes", shape.0, shape.1)));
    }
    for a in 0..n {
        if (corr[(a, a)] - 1.0).abs() > 1e-8 {
            return Err(Error::Domain(format!("correlation diagonal at {a} is {}", corr[(a, a)])));
        }
        for b in 0..a {
            let (x, y) = (corr[(a, b)], corr[(b, a)]);
            if !x.is_finite() || (x - y).abs() > 1e-8 {
                return Err(Error::Domain(format!("correlation matrix not symmetric at ({a}, {b})")));
            }
        }
    }
    let mut mags: Vec<f64> = corr.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let threshold = mags[(q * (mags.len() - 1) as f64).floor() as usize];
    let degrees = (0..n)
        .map(|a| {
            (0..n)
                .filter(|&b| {
                    let v = corr[(a, b)].abs();
                    b != a && v > 0.0 && v >= threshold
                })
                .count()
        })
        .collect();
    Ok(ConnectionGraph {
        quantile: q,
        threshold,
        shape,
        degrees,
    })
}
