//! Space/time grids, replicated-trial datasets and their sufficient statistics.
//!
//! Every trial is an `I x J` matrix (space along rows, time along columns).
//! Vectorization is column stacking, so the spatial index varies fastest:
//! flat index `j * I + i` (zero-based). Joint covariances therefore consist
//! of `J x J` blocks of `I x I` spatial matrices.

pub(crate) mod io;

pub use io::{load_dataset, save_dataset, write_atomic, DataFormat};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fixed spatial locations in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid<T> {
    coords: Vec<T>,
    dim: usize,
}

impl<T: Scalar> SpaceGrid<T> {
    /// Builds a grid from `points`, each of length `dim`.
    pub fn new(points: &[Vec<T>], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("spatial dimension must be >= 1"));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::domain(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(coords, dim)
    }

    /// Builds a grid from row-major flat coordinates.
    pub fn from_flat(coords: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::domain("space grid needs I >= 1 points of dimension d >= 1"));
        }
        if coords.iter().any(|c| !c.finite()) {
            return Err(Error::domain("space grid coordinates must be finite"));
        }
        let grid = SpaceGrid { coords, dim };
        grid.check_distinct()?;
        Ok(grid)
    }

    /// One-dimensional grid.
    pub fn line(xs: &[T]) -> Result<Self> {
        Self::from_flat(xs.to_vec(), 1)
    }

    /// Regular `rows x cols` lattice with unit spacing, row-major node order.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        let mut coords = Vec::with_capacity(rows * cols * 2);
        for r in 0..rows {
            for c in 0..cols {
                coords.push(T::lit(r as f64));
                coords.push(T::lit(c as f64));
            }
        }
        Self::from_flat(coords, 2)
    }

    fn check_distinct(&self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.partial_cmp(y).expect("finite coordinates"))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            if self.point(w[0]) == self.point(w[1]) {
                return Err(Error::domain(format!(
                    "space grid points {} and {} coincide",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[T]> {
        self.coords.chunks(self.dim)
    }

    pub fn flat(&self) -> &[T] {
        &self.coords
    }

    pub fn to_points(&self) -> Vec<Vec<T>> {
        self.points().map(<[T]>::to_vec).collect()
    }

    /// Sub-grid restricted to `idx`, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.point(i));
        }
        Self::from_flat(coords, self.dim)
    }
}

/// Strictly increasing, non-negative observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    times: Vec<T>,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(times: Vec<T>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::domain("time grid needs J >= 1 points"));
        }
        if times.iter().any(|t| !t.finite() || *t < T::zero()) {
            return Err(Error::domain("times must be finite and non-negative"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("times must be strictly increasing"));
        }
        Ok(TimeGrid { times })
    }

    /// `n` equally spaced times on `[0, end]` (just `[0]` when `n == 1`).
    pub fn uniform(n: usize, end: f64) -> Result<Self> {
        let step = if n > 1 { end / (n - 1) as f64 } else { 0.0 };
        Self::new((0..n).map(|j| T::lit(j as f64 * step)).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&j| self.times[j]).collect())
    }
}

/// `K` replicated trials observed on a common space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalDataset<T: Scalar> {
    space: SpaceGrid<T>,
    time: TimeGrid<T>,
    trials: Vec<DMatrix<T>>,
}

impl<T: Scalar> SpatioTemporalDataset<T> {
    pub fn new(space: SpaceGrid<T>, time: TimeGrid<T>, trials: Vec<DMatrix<T>>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::InvalidData("K must be ≥ 1".into()));
        }
        let (ni, nj) = (space.len(), time.len());
        for (k, y) in trials.iter().enumerate() {
            if y.shape() != (ni, nj) {
                return Err(Error::InvalidData(format!(
                    "trial {k} has shape {:?}, expected ({ni}, {nj})",
                    y.shape()
                )));
            }
            if y.iter().any(|v| !v.finite()) {
                return Err(Error::InvalidData(format!("trial {k} has non-finite values")));
            }
        }
        Ok(SpatioTemporalDataset {
            space,
            time,
            trials,
        })
    }

    pub fn space(&self) -> &SpaceGrid<T> {
        &self.space
    }

    pub fn time(&self) -> &TimeGrid<T> {
        &self.time
    }

    pub fn trials(&self) -> &[DMatrix<T>] {
        &self.trials
    }

    pub fn n_space(&self) -> usize {
        self.space.len()
    }

    pub fn n_time(&self) -> usize {
        self.time.len()
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    /// Keeps only the time columns listed in `idx`.
    pub fn select_times(&self, idx: &[usize]) -> Result<Self> {
        let time = self.time.select(idx)?;
        let trials = self.trials.iter().map(|y| y.select_columns(idx)).collect();
        Self::new(self.space.clone(), time, trials)
    }

    /// Keeps only the spatial rows listed in `idx`.
    pub fn select_space(&self, idx: &[usize]) -> Result<Self> {
        let space = self.space.select(idx)?;
        let trials = self.trials.iter().map(|y| y.select_rows(idx)).collect();
        Self::new(space, self.time.clone(), trials)
    }

    pub fn sufficient_stats(&self) -> SufficientStats<T> {
        sufficient_stats(self)
    }
}

/// Trial mean, mean squared norm and centered trials, all vectorized.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats<T: Scalar> {
    pub n_space: usize,
    pub n_time: usize,
    pub n_trials: usize,
    /// `(1/K) sum_k vec(Y_k)`.
    pub ybar: DVector<T>,
    /// `(1/K) sum_k tr(Y_k^T Y_k)`.
    pub ysq: T,
    /// `vec(Y_k) - ybar` for every trial.
    pub centered: Vec<DVector<T>>,
}

impl<T: Scalar> SufficientStats<T> {
    /// `ybar` viewed as an `I x J` matrix.
    pub fn ybar_matrix(&self) -> DMatrix<T> {
        DMatrix::from_column_slice(self.n_space, self.n_time, self.ybar.as_slice())
    }

    /// Centered trial `k` as an `I x J` matrix.
    pub fn centered_matrix(&self, k: usize) -> DMatrix<T> {
        DMatrix::from_column_slice(self.n_space, self.n_time, self.centered[k].as_slice())
    }
}

pub fn sufficient_stats<T: Scalar>(ds: &SpatioTemporalDataset<T>) -> SufficientStats<T> {
    let n = ds.n_space() * ds.n_time();
    let k = T::lit(ds.n_trials() as f64);
    let mut ybar = DVector::<T>::zeros(n);
    let mut ysq = T::zero();
    for y in ds.trials() {
        for (acc, &v) in ybar.iter_mut().zip(y.as_slice()) {
            *acc += v;
        }
        ysq += y.norm_squared();
    }
    ybar /= k;
    ysq /= k;
    let centered = ds
        .trials()
        .iter()
        .map(|y| DVector::from_column_slice(y.as_slice()) - &ybar)
        .collect();
    SufficientStats {
        n_space: ds.n_space(),
        n_time: ds.n_time(),
        n_trials: ds.n_trials(),
        ybar,
        ysq,
        centered,
    }
}

/// One-based flat index of space index `i` and time index `j`: `(j-1) I + i`.
pub fn vec_index(i: usize, j: usize, n_space: usize, n_time: usize) -> Result<usize> {
    if i == 0 || i > n_space || j == 0 || j > n_time {
        return Err(Error::domain(format!(
            "index ({i}, {j}) outside 1..={n_space} x 1..={n_time}"
        )));
    }
    Ok((j - 1) * n_space + i)
}

/// Inverse of [`vec_index`].
pub fn unvec_index(flat: usize, n_space: usize, n_time: usize) -> Result<(usize, usize)> {
    if flat == 0 || flat > n_space * n_time {
        return Err(Error::domain(format!("flat index {flat} outside 1..={}", n_space * n_time)));
    }
    Ok(((flat - 1) % n_space + 1, (flat - 1) / n_space + 1))
}
