//! Improved Sheather-Jones bandwidth selection.
//!
//! The sample is rescaled to the unit interval, linearly binned and
//! transformed with a DCT-II. The optimal diffusion time `t = (h / R)^2` is the
//! root of `t - xi * gamma^[l](t)` with `l = 7` stages of plug-in functional
//! estimates, found with a bracketed Brent iteration.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::binned::{fft_pair, linear_binning};
use super::{GridSpec, KdeError, Sample, MIN_DISTINCT_VALUES};

const ISJ_GRID_POINTS: usize = 1 << 14;
const STAGES: i32 = 7;
const MAX_ITERATIONS: usize = 50;
const REL_TOLERANCE: f64 = 1e-9;
const MAX_T: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandwidthMethod {
    ImprovedSheatherJones,
    /// The plug-in fixed point did not converge; `1.06 * sigma * n^(-1/5)` was used.
    NormalReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub h: f64,
    pub method: BandwidthMethod,
}

impl Bandwidth {
    pub fn is_fallback(&self) -> bool {
        self.method == BandwidthMethod::NormalReference
    }
}

fn check_distinct(sample: &Sample) -> Result<(), KdeError> {
    let mut seen: Vec<f64> = Vec::with_capacity(MIN_DISTINCT_VALUES);
    for &v in sample.values() {
        if !seen.contains(&v) {
            seen.push(v);
            if seen.len() >= MIN_DISTINCT_VALUES {
                return Ok(());
            }
        }
    }
    if seen.len() == 1 {
        return Err(KdeError::ZeroVariance(seen[0]));
    }
    Err(KdeError::TooFewDistinct {
        found: seen.len(),
        required: MIN_DISTINCT_VALUES,
    })
}

/// Normal-reference rule `1.06 * sigma * n^(-1/5)`.
pub fn normal_reference(sample: &Sample) -> Result<f64, KdeError> {
    let n = sample.len() as f64;
    if sample.len() < 2 {
        return Err(KdeError::TooFewDistinct {
            found: sample.len(),
            required: 2,
        });
    }
    let mean = sample.values().iter().sum::<f64>() / n;
    let var = sample
        .values()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1.0);
    if var <= 0.0 {
        return Err(KdeError::ZeroVariance(mean));
    }
    Ok(1.06 * var.sqrt() * n.powf(-0.2))
}

/// DCT-II, `X[k] = 2 * sum_j x[j] cos(pi k (2j + 1) / (2n))`.
fn dct2(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut v = vec![Complex::new(0.0, 0.0); n];
    for k in 0..n / 2 {
        v[k].re = x[2 * k];
        v[n - 1 - k].re = x[2 * k + 1];
    }
    let (forward, _) = fft_pair(n);
    forward.process(&mut v);
    v.iter()
        .enumerate()
        .map(|(k, c)| {
            let w = Complex::from_polar(2.0, -PI * k as f64 / (2.0 * n as f64));
            (w * c).re
        })
        .collect()
}

struct PluginProblem {
    n: f64,
    /// `k^2` for k = 1..m-1.
    k2: Vec<f64>,
    /// `(a_k / 2)^2` of the DCT coefficients.
    a2: Vec<f64>,
}

impl PluginProblem {
    /// `||f_t^(s)||^2` estimated from the cosine coefficients.
    fn functional(&self, s: i32, t: f64) -> f64 {
        let scale = 2.0 * PI.powi(2 * s);
        let mut sum = 0.0;
        for (&k2, &a2) in self.k2.iter().zip(&self.a2) {
            let exponent = -k2 * PI * PI * t;
            if exponent < -745.0 {
                break;
            }
            sum += k2.powi(s) * a2 * exponent.exp();
        }
        scale * sum
    }

    /// `t - xi * gamma^[l](t)`; its root is the plug-in diffusion time.
    fn residual(&self, t: f64) -> f64 {
        let mut f = self.functional(STAGES, t);
        for s in (2..STAGES).rev() {
            let odd_product: f64 = (1..=2 * s - 1).step_by(2).map(f64::from).product();
            let k0 = odd_product / (2.0 * PI).sqrt();
            let c = (1.0 + 0.5f64.powf(s as f64 + 0.5)) / 3.0;
            let time = (2.0 * c * k0 / (self.n * f)).powf(2.0 / (3.0 + 2.0 * s as f64));
            f = self.functional(s, time);
        }
        t - (2.0 * self.n * PI.sqrt() * f).powf(-0.4)
    }
}

/// Brent's method on a sign-changing bracket. Returns `None` if it does not
/// reach the relative tolerance within `MAX_ITERATIONS`.
fn brent(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if !(fa.is_finite() && fb.is_finite()) || fa * fb > 0.0 {
        return None;
    }
    let (mut c, mut fc) = (b, fb);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..MAX_ITERATIONS {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * REL_TOLERANCE * b.abs();
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return None;
        }
    }
    None
}

/// Selects a bandwidth with the improved Sheather-Jones plug-in rule, falling
/// back to the normal-reference rule when the fixed point cannot be found.
pub fn select_bandwidth(sample: &Sample) -> Result<Bandwidth, KdeError> {
    check_distinct(sample)?;
    let (min, max) = sample.min_max();
    let range = max - min;
    let lo = min - range / 10.0;
    let hi = max + range / 10.0;
    let grid = GridSpec::new(lo, hi, ISJ_GRID_POINTS)?;
    let mut counts = linear_binning(sample.values(), &grid);
    let total: f64 = counts.iter().sum();
    counts.iter_mut().for_each(|c| *c /= total);

    let coeffs = dct2(&counts);
    let problem = PluginProblem {
        n: sample.len() as f64,
        k2: (1..ISJ_GRID_POINTS).map(|k| (k * k) as f64).collect(),
        a2: coeffs[1..].iter().map(|a| (a / 2.0) * (a / 2.0)).collect(),
    };

    let n_clamped = (sample.len() as f64).clamp(50.0, 1050.0);
    let mut upper = 1e-12 + 0.01 * (n_clamped - 50.0) / 1000.0;
    let at_zero = problem.residual(0.0);
    let t_star = loop {
        let at_upper = problem.residual(upper);
        if at_zero.is_finite() && at_upper.is_finite() && at_zero * at_upper <= 0.0 {
            break brent(|t| problem.residual(t), 0.0, upper);
        }
        if upper >= MAX_T {
            break None;
        }
        upper = (2.0 * upper).min(MAX_T);
    };

    match t_star {
        Some(t) if t > 0.0 => Ok(Bandwidth {
            h: t.sqrt() * (hi - lo),
            method: BandwidthMethod::ImprovedSheatherJones,
        }),
        _ => Ok(Bandwidth {
            h: normal_reference(sample)?,
            method: BandwidthMethod::NormalReference,
        }),
    }
}
