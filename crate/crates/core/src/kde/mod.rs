//! Univariate Gaussian kernel density estimation on regular grids.
//!
//! Densities are always sampled on a [`GridSpec`] with a power-of-two number
//! of points. Estimation bins the sample linearly onto the grid and convolves
//! with the sampled kernel through an FFT; bandwidths come from the improved
//! Sheather-Jones plug-in selector (see [`select_bandwidth`]).

mod bandwidth;
mod binned;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bandwidth::{normal_reference, select_bandwidth, Bandwidth, BandwidthMethod};
pub use binned::{direct_kde, estimate_density, linear_binning};

use crate::TaskId;

/// Default number of grid points used for estimates.
pub const DEFAULT_GRID_POINTS: usize = 1 << 14;

/// Minimum number of distinct values accepted by the bandwidth selector.
pub const MIN_DISTINCT_VALUES: usize = 8;

/// Tolerance on the trapezoid integral of every produced density.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KdeError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("sample has zero variance (all values equal {0})")]
    ZeroVariance(f64),
    #[error("sample has {found} distinct values, at least {required} are required")]
    TooFewDistinct { found: usize, required: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("grid [{lo}, {hi}] too narrow for the sample: {clipped_mass:.3e} of kernel mass clipped")]
    GridTooNarrow { lo: f64, hi: f64, clipped_mass: f64 },
    #[error("densities are defined on different grids")]
    GridMismatch,
    #[error("cannot average an empty list of densities")]
    NoDensities,
    #[error("density values must be finite and non-negative with positive mass")]
    InvalidValues,
}

/// A sample of feature values collected for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
    task_id: TaskId,
}

impl Sample {
    pub fn new(task_id: TaskId, values: Vec<f64>) -> Result<Self, KdeError> {
        if values.is_empty() {
            return Err(KdeError::EmptySample);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(KdeError::NonFinite(i));
        }
        Ok(Self { values, task_id })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn task_id(&self) -> TaskId {
        self.task_id
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn distinct_count(&self) -> usize {
        let mut sorted = self.values.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        sorted.len()
    }
}

/// Regular grid `lo, lo + dx, ..., hi` with `points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lo: f64,
    hi: f64,
    points: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self, KdeError> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(KdeError::InvalidGrid(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        if points < 2 || !points.is_power_of_two() {
            return Err(KdeError::InvalidGrid(format!(
                "points must be a power of two >= 2, got {points}"
            )));
        }
        Ok(Self { lo, hi, points })
    }

    /// Default grid for a sample and bandwidth: `[min - 3h, max + 3h]`.
    pub fn covering(sample: &Sample, bandwidth: f64, points: usize) -> Result<Self, KdeError> {
        let (min, max) = sample.min_max();
        Self::new(min - 3.0 * bandwidth, max + 3.0 * bandwidth, points)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(move |i| self.x(i))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Trapezoid rule over values sampled on `grid`.
pub fn trapezoid(grid: &GridSpec, values: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), grid.points());
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    grid.spacing() * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// A probability density sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    grid: GridSpec,
    values: Vec<f64>,
    bandwidth: f64,
    train_size: usize,
}

impl Density {
    /// Builds a density from raw non-negative grid values, rescaling them so that
    /// the trapezoid integral is exactly one.
    pub fn from_values(
        grid: GridSpec,
        mut values: Vec<f64>,
        bandwidth: f64,
        train_size: usize,
    ) -> Result<Self, KdeError> {
        if values.len() != grid.points() {
            return Err(KdeError::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.points(),
                values.len()
            )));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(KdeError::InvalidBandwidth(bandwidth));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(KdeError::InvalidValues);
        }
        let mass = trapezoid(&grid, &values);
        if !(mass > 0.0) {
            return Err(KdeError::InvalidValues);
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self {
            grid,
            values,
            bandwidth,
            train_size,
        })
    }

    /// Samples `f` on the grid and normalizes.
    pub fn from_fn(
        grid: GridSpec,
        f: impl Fn(f64) -> f64,
        bandwidth: f64,
        train_size: usize,
    ) -> Result<Self, KdeError> {
        let values = grid.xs().map(f).collect();
        Self::from_values(grid, values, bandwidth, train_size)
    }

    /// Uniform density on `[a, b]` sampled on `grid`.
    pub fn uniform(grid: GridSpec, a: f64, b: f64) -> Result<Self, KdeError> {
        let height = 1.0 / (b - a);
        Self::from_fn(
            grid,
            |x| if x >= a && x <= b { height } else { 0.0 },
            1.0,
            1,
        )
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn train_size(&self) -> usize {
        self.train_size
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    /// Linear interpolation between grid nodes; zero outside the grid.
    pub fn evaluate(&self, x: f64) -> f64 {
        evaluate(self, x)
    }

    /// Re-samples this density onto another grid and renormalizes.
    pub fn resample(&self, grid: GridSpec) -> Result<Self, KdeError> {
        Self::from_fn(grid, |x| self.evaluate(x), self.bandwidth, self.train_size)
    }

    /// Cumulative mass at each grid node (trapezoid).
    pub fn cdf(&self) -> Vec<f64> {
        let dx = self.grid.spacing();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.values.len());
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * dx * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }
}

/// Linear interpolation of the density at `x`; zero outside `[lo, hi]`.
pub fn evaluate(density: &Density, x: f64) -> f64 {
    let grid = density.grid;
    if !grid.contains(x) {
        return 0.0;
    }
    let pos = (x - grid.lo) / grid.spacing();
    let i = (pos.floor() as usize).min(grid.points - 2);
    let t = (pos - i as f64).clamp(0.0, 1.0);
    let v = &density.values;
    v[i] + t * (v[i + 1] - v[i])
}

/// Pointwise mean of densities on a common grid.
pub fn mean_density(densities: &[Density]) -> Result<Density, KdeError> {
    let first = densities.first().ok_or(KdeError::NoDensities)?;
    if densities.iter().any(|d| d.grid != first.grid) {
        return Err(KdeError::GridMismatch);
    }
    let k = densities.len() as f64;
    let mut values = vec![0.0; first.grid.points];
    for d in densities {
        for (acc, v) in values.iter_mut().zip(&d.values) {
            *acc += v;
        }
    }
    values.iter_mut().for_each(|v| *v /= k);
    let bandwidth = densities.iter().map(|d| d.bandwidth).sum::<f64>() / k;
    // A mean of normalized densities is normalized up to rounding; keep the
    // pointwise mean exact instead of rescaling.
    Ok(Density {
        grid: first.grid,
        values,
        bandwidth,
        train_size: first.train_size,
    })
}

/// Integrated square error between two densities on the same grid.
pub fn ise(a: &Density, b: &Density) -> Result<f64, KdeError> {
    if a.grid != b.grid {
        return Err(KdeError::GridMismatch);
    }
    let sq: Vec<f64> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .collect();
    Ok(trapezoid(&a.grid, &sq))
}
