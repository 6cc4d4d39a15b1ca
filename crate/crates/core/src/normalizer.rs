//! Approximate normalization of quadratic scores.
//!
//! Mean scores `S_i` observed for estimates trained on `N_i` samples follow
//! `S_i ≈ QS_opt - c * N_i^(-r)`. Fitting `(QS_opt, c)` under
//! `QS_opt >= QS_max, c >= 0` yields the optimal score used to turn scores
//! into accuracies, and an invertible model of accuracy versus sample size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Convergence exponent of the mean integrated square error of a KDE.
pub const KDE_RATE: f64 = 0.8;
/// Bracket of the exponent search of [`fit_nonlinear`].
pub const RATE_BRACKET: (f64, f64) = (0.1, 2.0);

const GOLDEN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalizerError {
    #[error("need at least {required} points with distinct sizes, got {found}")]
    TooFewPoints { required: usize, found: usize },
    #[error("sample sizes must be distinct")]
    DuplicateSizes,
    #[error("sample sizes must be positive")]
    NonPositiveSize,
    #[error("sizes and scores differ in length ({sizes} vs {scores})")]
    LengthMismatch { sizes: usize, scores: usize },
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("optimal score {0} is not positive; normalized score undefined")]
    NonPositiveOptimum(f64),
    #[error("accuracy {0} is outside (0, 1)")]
    UnreachableAccuracy(f64),
}

/// Observed `(size, mean score)` pairs of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoints {
    sizes: Vec<u64>,
    mean_scores: Vec<f64>,
    qs_max: f64,
}

impl FitPoints {
    /// `qs_max` is raised to at least the largest of `mean_scores`.
    pub fn new(sizes: Vec<u64>, mean_scores: Vec<f64>, qs_max: f64) -> Result<Self, NormalizerError> {
        if sizes.len() != mean_scores.len() {
            return Err(NormalizerError::LengthMismatch {
                sizes: sizes.len(),
                scores: mean_scores.len(),
            });
        }
        if sizes.contains(&0) {
            return Err(NormalizerError::NonPositiveSize);
        }
        if mean_scores.iter().any(|s| !s.is_finite()) || !qs_max.is_finite() && qs_max != f64::NEG_INFINITY {
            return Err(NormalizerError::NonFiniteScore);
        }
        let mut sorted = sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != sizes.len() {
            return Err(NormalizerError::DuplicateSizes);
        }
        let observed = mean_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            sizes,
            mean_scores,
            qs_max: qs_max.max(observed),
        })
    }

    /// Points whose `qs_max` is simply the largest observed score.
    pub fn from_observations(sizes: Vec<u64>, mean_scores: Vec<f64>) -> Result<Self, NormalizerError> {
        Self::new(sizes, mean_scores, f64::NEG_INFINITY)
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn mean_scores(&self) -> &[f64] {
        &self.mean_scores
    }

    pub fn qs_max(&self) -> f64 {
        self.qs_max
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

/// Fitted `S(n) = qs_opt - c * n^(-r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitModel {
    pub qs_opt: f64,
    pub c: f64,
    pub r: f64,
    pub residual: f64,
}

/// Bounds applied to predicted sample sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBounds {
    pub min: u64,
    pub max: u64,
}

impl Default for SizeBounds {
    fn default() -> Self {
        Self {
            min: 1,
            max: 1 << 40,
        }
    }
}

fn residual_norm(points: &FitPoints, u: &[f64], qs_opt: f64, c: f64) -> f64 {
    points
        .mean_scores
        .iter()
        .zip(u)
        .map(|(s, ui)| {
            let e = qs_opt - s - c * ui;
            e * e
        })
        .sum::<f64>()
        .sqrt()
}

/// Minimizes `|| qs_opt - S - c * u ||` for fixed regressors `u = N^(-r)` under
/// `qs_opt >= qs_max`, `c >= 0` by enumerating active sets.
fn fit_with_exponent(points: &FitPoints, r: f64) -> FitModel {
    let u: Vec<f64> = points.sizes.iter().map(|&n| (n as f64).powf(-r)).collect();
    let m = u.len() as f64;
    let su: f64 = u.iter().sum();
    let suu: f64 = u.iter().map(|x| x * x).sum();
    let ss: f64 = points.mean_scores.iter().sum();
    let sus: f64 = u.iter().zip(&points.mean_scores).map(|(a, b)| a * b).sum();
    let qs_max = points.qs_max;

    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(4);
    // Unconstrained: S = qs_opt - c u.
    let det = m * suu - su * su;
    if det.abs() > f64::EPSILON * m * suu {
        let c = (su * ss - m * sus) / det;
        let qs_opt = (ss + c * su) / m;
        candidates.push((qs_opt, c));
    }
    // c = 0 active.
    candidates.push(((ss / m).max(qs_max), 0.0));
    // qs_opt = qs_max active.
    candidates.push((qs_max, ((qs_max * su - sus) / suu).max(0.0)));
    // Both active.
    candidates.push((qs_max, 0.0));

    candidates
        .into_iter()
        .filter(|&(q, c)| q >= qs_max && c >= 0.0)
        .map(|(q, c)| FitModel {
            qs_opt: q,
            c,
            r,
            residual: residual_norm(points, &u, q, c),
        })
        .min_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("the doubly-constrained candidate is always feasible")
}

/// Constrained least squares with the KDE rate `r = 4/5`.
pub fn fit_linear(points: &FitPoints) -> Result<FitModel, NormalizerError> {
    if points.len() < 2 {
        return Err(NormalizerError::TooFewPoints {
            required: 2,
            found: points.len(),
        });
    }
    Ok(fit_with_exponent(points, KDE_RATE))
}

/// Fits `(qs_opt, c, r)` with a golden-section search over `r` in
/// [`RATE_BRACKET`], solving the linear problem exactly for each `r`.
pub fn fit_nonlinear(points: &FitPoints) -> Result<FitModel, NormalizerError> {
    if points.len() < 3 {
        return Err(NormalizerError::TooFewPoints {
            required: 3,
            found: points.len(),
        });
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = RATE_BRACKET;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = fit_with_exponent(points, x1);
    let mut f2 = fit_with_exponent(points, x2);
    while b - a > GOLDEN_TOLERANCE {
        if f1.residual <= f2.residual {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = fit_with_exponent(points, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = fit_with_exponent(points, x2);
        }
    }
    let best = if f1.residual <= f2.residual { f1 } else { f2 };
    Ok(best)
}

/// Accuracy of `score`: `score / qs_opt`.
pub fn normalize(score: f64, model: &FitModel) -> Result<f64, NormalizerError> {
    if !(model.qs_opt > 0.0) {
        return Err(NormalizerError::NonPositiveOptimum(model.qs_opt));
    }
    Ok(score / model.qs_opt)
}

/// Predicted accuracy for an estimate trained on `n` samples.
pub fn predict_score(model: &FitModel, n: u64) -> f64 {
    1.0 - (model.c / model.qs_opt) * (n.max(1) as f64).powf(-model.r)
}

/// Smallest sample size whose predicted accuracy reaches `accuracy`, clamped to `bounds`.
pub fn predict_sample_size(
    model: &FitModel,
    accuracy: f64,
    bounds: SizeBounds,
) -> Result<u64, NormalizerError> {
    if !(accuracy > 0.0 && accuracy < 1.0) {
        return Err(NormalizerError::UnreachableAccuracy(accuracy));
    }
    if !(model.qs_opt > 0.0) {
        return Err(NormalizerError::NonPositiveOptimum(model.qs_opt));
    }
    if model.c <= 0.0 {
        return Ok(bounds.min);
    }
    let x = (model.c / (model.qs_opt * (1.0 - accuracy))).powf(1.0 / model.r);
    if !x.is_finite() || x >= bounds.max as f64 {
        return Ok(bounds.max);
    }
    let mut n = (x.ceil() as u64).max(1);
    // Absorb rounding in the closed form so that the result is the exact
    // smallest n with predict_score(n) >= accuracy.
    while n > 1 && predict_score(model, n - 1) >= accuracy {
        n -= 1;
    }
    while predict_score(model, n) < accuracy && n < bounds.max {
        n += 1;
    }
    Ok(n.clamp(bounds.min, bounds.max))
}
