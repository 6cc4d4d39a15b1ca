use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Density, GridSpec, KdeError, Sample};

type FftPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

thread_local! {
    static PLANS: RefCell<HashMap<usize, FftPair>> = RefCell::new(HashMap::new());
}

pub(crate) fn fft_pair(len: usize) -> FftPair {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry(len)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
            })
            .clone()
    })
}

/// Linear binning: each value splits unit weight between its two neighbouring
/// grid nodes in proportion to proximity. Values outside the grid are dropped.
pub fn linear_binning(values: &[f64], grid: &GridSpec) -> Vec<f64> {
    let m = grid.points();
    let dx = grid.spacing();
    let mut counts = vec![0.0; m];
    for &x in values {
        if !grid.contains(x) {
            continue;
        }
        let pos = (x - grid.lo()) / dx;
        let i = (pos.floor() as usize).min(m - 2);
        let t = (pos - i as f64).clamp(0.0, 1.0);
        counts[i] += 1.0 - t;
        counts[i + 1] += t;
    }
    counts
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn clipped_mass(values: &[f64], bandwidth: f64, grid: &GridSpec) -> f64 {
    let total: f64 = values
        .iter()
        .map(|&x| {
            std_normal_cdf((grid.lo() - x) / bandwidth)
                + (1.0 - std_normal_cdf((grid.hi() - x) / bandwidth))
        })
        .sum();
    total / values.len() as f64
}

/// Gaussian KDE of `sample` on `grid`, via linear binning and FFT convolution.
///
/// The grid must cover `[min - 3h, max + 3h]`; the result is renormalized so its
/// trapezoid integral is one.
pub fn estimate_density(
    sample: &Sample,
    bandwidth: f64,
    grid: &GridSpec,
) -> Result<Density, KdeError> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(KdeError::InvalidBandwidth(bandwidth));
    }
    let (min, max) = sample.min_max();
    if min - 3.0 * bandwidth < grid.lo() || max + 3.0 * bandwidth > grid.hi() {
        return Err(KdeError::GridTooNarrow {
            lo: grid.lo(),
            hi: grid.hi(),
            clipped_mass: clipped_mass(sample.values(), bandwidth, grid),
        });
    }

    let m = grid.points();
    let dx = grid.spacing();
    let counts = linear_binning(sample.values(), grid);

    // Circular convolution of length 2m is exact for offsets in (-m, m).
    let len = 2 * m;
    let norm = 1.0 / ((2.0 * PI).sqrt() * bandwidth);
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    for d in 0..m {
        let u = d as f64 * dx / bandwidth;
        let k = norm * (-0.5 * u * u).exp();
        kernel[d].re = k;
        if d > 0 {
            kernel[len - d].re = k;
        }
    }
    let mut signal: Vec<Complex<f64>> = counts
        .iter()
        .map(|&c| Complex::new(c, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();

    let (forward, inverse) = fft_pair(len);
    forward.process(&mut kernel);
    forward.process(&mut signal);
    for (s, k) in signal.iter_mut().zip(&kernel) {
        *s *= k;
    }
    inverse.process(&mut signal);

    let scale = 1.0 / (len as f64 * sample.len() as f64);
    let values: Vec<f64> = signal[..m].iter().map(|c| (c.re * scale).max(0.0)).collect();
    Density::from_values(*grid, values, bandwidth, sample.len())
}

/// Direct O(n * grid) evaluation of the Gaussian KDE at every grid node,
/// without renormalization.
pub fn direct_kde(values: &[f64], bandwidth: f64, grid: &GridSpec) -> Vec<f64> {
    let norm = 1.0 / ((2.0 * PI).sqrt() * bandwidth * values.len() as f64);
    grid.xs()
        .map(|x| {
            values
                .iter()
                .map(|&xi| {
                    let u = (x - xi) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TaskId;

    #[test]
    fn single_kernel_peak() {
        let s = Sample::new(TaskId(0), vec![0.0]).unwrap();
        let grid = GridSpec::new(-5.0, 5.0, 1 << 12).unwrap();
        let d = estimate_density(&s, 1.0, &grid).unwrap();
        let peak = 1.0 / (2.0 * PI).sqrt();
        assert!((d.evaluate(0.0) - peak).abs() < 1e-4);
    }

    #[test]
    fn two_symmetric_kernels() {
        let s = Sample::new(TaskId(0), vec![-1.0, 1.0]).unwrap();
        let grid = GridSpec::new(-6.0, 6.0, 1 << 12).unwrap();
        let d = estimate_density(&s, 1.0, &grid).unwrap();
        let phi1 = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((d.evaluate(0.0) - phi1).abs() < 1e-4);
    }

    #[test]
    fn narrow_grid_reports_clipped_mass() {
        let s = Sample::new(TaskId(0), vec![0.0]).unwrap();
        let grid = GridSpec::new(-1.0, 5.0, 64).unwrap();
        match estimate_density(&s, 1.0, &grid) {
            Err(KdeError::GridTooNarrow { clipped_mass, .. }) => {
                // Phi(-1) of the kernel lies left of the grid.
                assert!((clipped_mass - 0.158655).abs() < 1e-4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn linear_binning_conserves_weight() {
        let grid = GridSpec::new(0.0, 1.0, 16).unwrap();
        let counts = linear_binning(&[0.0, 0.33, 0.5, 1.0, 2.0], &grid);
        assert!((counts.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    }
}
