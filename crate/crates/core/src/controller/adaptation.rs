use super::ControllerError;
use crate::normalizer::{predict_sample_size, predict_score, FitModel, SizeBounds};

const MAX_ACCURACY: f64 = 1.0 - 1e-12;
const BISECTION_TOLERANCE: f64 = 1e-6;
const BISECTION_ITERATIONS: usize = 64;

fn size_for(model: &FitModel, accuracy: f64, bounds: SizeBounds) -> u64 {
    if accuracy <= 0.0 {
        return bounds.min;
    }
    predict_sample_size(model, accuracy.min(MAX_ACCURACY), bounds).unwrap_or(bounds.max)
}

/// Per-task sample sizes reaching each task's target accuracy.
pub fn adapt_minimize(models: &[(FitModel, f64)], bounds: SizeBounds) -> Result<Vec<u64>, ControllerError> {
    models
        .iter()
        .map(|(m, target)| predict_sample_size(m, *target, bounds).map_err(ControllerError::from))
        .collect()
}

/// Max-min allocation of `budget` samples over tasks with their own size
/// bounds: the largest common accuracy the budget affords, found by
/// bisection. Budget left over by rounding goes to the task with the lowest
/// predicted accuracy that is below its upper bound. Returns the sizes and
/// the common accuracy.
pub fn adapt_maxmin(models: &[(FitModel, SizeBounds)], budget: u64) -> Result<(Vec<u64>, f64), ControllerError> {
    let floor: u64 = models.iter().map(|(_, b)| b.min).sum();
    if floor > budget {
        return Err(ControllerError::InfeasibleBudget {
            budget,
            required: floor,
        });
    }
    let total = |a: f64| -> u64 { models.iter().map(|(m, b)| size_for(m, a, *b)).sum() };
    let (mut lo, mut hi) = (0.0, MAX_ACCURACY);
    if total(hi) <= budget {
        lo = hi;
    } else {
        for _ in 0..BISECTION_ITERATIONS {
            if hi - lo <= BISECTION_TOLERANCE {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if total(mid) <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let mut sizes: Vec<u64> = models.iter().map(|(m, b)| size_for(m, lo, *b)).collect();
    let spare = budget.saturating_sub(sizes.iter().sum());
    let bottleneck = models
        .iter()
        .zip(&sizes)
        .enumerate()
        .filter(|(_, ((_, b), &n))| n < b.max)
        .min_by(|(_, ((a, _), &na)), (_, ((b, _), &nb))| predict_score(a, na).total_cmp(&predict_score(b, nb)))
        .map(|(i, _)| i);
    if let Some(i) = bottleneck {
        sizes[i] = (sizes[i] + spare).min(models[i].1.max);
    }
    Ok((sizes, lo))
}

/// Limits the change from `previous` to a factor of `max_change`.
pub fn smooth_rate(previous: u64, proposed: u64, max_change: f64) -> u64 {
    let lo = (previous as f64 / max_change).floor() as u64;
    let hi = (previous as f64 * max_change).ceil() as u64;
    proposed.clamp(lo.min(hi), hi.max(lo))
}
