//! Quadratic scoring of density estimates.
//!
//! `QS(f, x) = 2 f(x) - ∫ f²`. The data plane only accumulates the reward
//! part (`f(x)`, looked up in a binned [`ScoreTable`]) and a shared counter of
//! test values; the factor two and the regularization `∫ f²` are applied when
//! the control plane turns counters into mean scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kde::{trapezoid, Density};
use crate::TaskId;

/// Default upper bound on table entries when the bin exponent is chosen automatically.
pub const DEFAULT_MAX_BINS: usize = 4096;
/// Tables resolving the support into fewer bins are rejected.
pub const MIN_BINS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("densities are defined on different grids")]
    GridMismatch,
    #[error("no test traffic was scored this step")]
    NoTestTraffic,
    #[error("bin exponent {exponent} resolves the support into {bins} bins (minimum {MIN_BINS}){}",
        match .suggested { Some(e) => format!("; try bin exponent {e}"), None => "; increase the quantizer scale".into() })]
    SupportTooNarrow {
        exponent: u32,
        bins: usize,
        suggested: Option<u32>,
    },
    #[error("estimate index {index} out of range for {len} reward counters")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("quantizer scale must be positive and finite, got {0}")]
    InvalidQuantizer(f64),
}

/// `∫ f²` over the density's grid.
pub fn regularization(density: &Density) -> f64 {
    let sq: Vec<f64> = density.values().iter().map(|v| v * v).collect();
    trapezoid(density.grid(), &sq)
}

/// Score of a single observation, `2 f(x) - ∫ f²`.
pub fn quadratic_score_sample(density: &Density, x: f64) -> f64 {
    2.0 * density.evaluate(x) - regularization(density)
}

/// Expected quadratic score of `estimate` for observations drawn from `truth`:
/// `2 ∫ estimate · truth - ∫ estimate²`.
pub fn expected_score(estimate: &Density, truth: &Density) -> Result<f64, ScoringError> {
    if estimate.grid() != truth.grid() {
        return Err(ScoringError::GridMismatch);
    }
    let cross: Vec<f64> = estimate
        .values()
        .iter()
        .zip(truth.values())
        .map(|(e, t)| e * t)
        .collect();
    Ok(2.0 * trapezoid(estimate.grid(), &cross) - regularization(estimate))
}

/// Maps feature values to the integer domain the match tables operate on:
/// `q = floor(x * scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    scale: f64,
}

impl Quantizer {
    /// Feature values are already integers in their quantized unit.
    pub const IDENTITY: Quantizer = Quantizer { scale: 1.0 };

    pub fn new(scale: f64) -> Result<Self, ScoringError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(ScoringError::InvalidQuantizer(scale));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn quantize(&self, x: f64) -> i64 {
        (x * self.scale).floor() as i64
    }

    pub fn to_feature(&self, q: f64) -> f64 {
        q / self.scale
    }
}

/// Key of `q` in a table with bins of width `2^exponent`: the low `exponent`
/// bits are ignored, as a ternary match with those bits masked.
pub fn masked_key(q: i64, exponent: u32) -> i64 {
    q >> exponent
}

/// Binned reward lookup for one density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    task_id: TaskId,
    bin_exponent: u32,
    origin: i64,
    rewards: Vec<f64>,
    regularization: f64,
    quantizer: Quantizer,
}

fn bins_for(q_lo: i64, q_hi: i64, exponent: u32) -> (i64, usize) {
    let origin = masked_key(q_lo, exponent) << exponent;
    let bins = (masked_key(q_hi, exponent) - masked_key(origin, exponent) + 1) as usize;
    (origin, bins)
}

fn quantized_support(density: &Density, quantizer: Quantizer) -> (i64, i64) {
    let grid = density.grid();
    (quantizer.quantize(grid.lo()), quantizer.quantize(grid.hi()))
}

/// Smallest bin exponent that fits the density's support into `max_bins` bins.
pub fn auto_bin_exponent(density: &Density, quantizer: Quantizer, max_bins: usize) -> u32 {
    let (q_lo, q_hi) = quantized_support(density, quantizer);
    (0..63)
        .find(|&e| bins_for(q_lo, q_hi, e).1 <= max_bins)
        .unwrap_or(63)
}

/// Builds the per-bin reward table of `density` (density at each bin centre).
pub fn build_score_table(
    task_id: TaskId,
    density: &Density,
    bin_exponent: u32,
    quantizer: Quantizer,
) -> Result<ScoreTable, ScoringError> {
    let (q_lo, q_hi) = quantized_support(density, quantizer);
    let (origin, bins) = bins_for(q_lo, q_hi, bin_exponent);
    if bins < MIN_BINS {
        let auto = auto_bin_exponent(density, quantizer, DEFAULT_MAX_BINS);
        let suggested = (bins_for(q_lo, q_hi, auto).1 >= MIN_BINS).then_some(auto);
        return Err(ScoringError::SupportTooNarrow {
            exponent: bin_exponent,
            bins,
            suggested,
        });
    }
    let width = (1i64 << bin_exponent) as f64;
    let rewards = (0..bins)
        .map(|b| {
            let centre = origin as f64 + (b as f64 + 0.5) * width;
            density.evaluate(quantizer.to_feature(centre))
        })
        .collect();
    Ok(ScoreTable {
        task_id,
        bin_exponent,
        origin,
        rewards,
        regularization: regularization(density),
        quantizer,
    })
}

/// Builds a table with the automatically selected bin exponent.
pub fn build_score_table_auto(
    task_id: TaskId,
    density: &Density,
    quantizer: Quantizer,
    max_bins: usize,
) -> Result<ScoreTable, ScoringError> {
    let exponent = auto_bin_exponent(density, quantizer, max_bins);
    build_score_table(task_id, density, exponent, quantizer)
}

/// One ternary match rule of a score table: `(value, mask)` on the quantized key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinRule {
    pub value: i64,
    pub mask: i64,
}

impl BinRule {
    pub fn matches(&self, q: i64) -> bool {
        q & self.mask == self.value & self.mask
    }
}

impl ScoreTable {
    pub fn task_id(&self) -> TaskId {
        self.task_id
    }

    pub fn bin_exponent(&self) -> u32 {
        self.bin_exponent
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn quantizer(&self) -> Quantizer {
        self.quantizer
    }

    pub fn bin_width(&self) -> i64 {
        1i64 << self.bin_exponent
    }

    /// Index of the bin holding `q`, if any.
    pub fn bin_of(&self, q: i64) -> Option<usize> {
        let offset = masked_key(q, self.bin_exponent) - masked_key(self.origin, self.bin_exponent);
        (offset >= 0 && (offset as usize) < self.rewards.len()).then_some(offset as usize)
    }

    /// Reward for a quantized value; zero outside the table.
    pub fn lookup(&self, q: i64) -> f64 {
        self.bin_of(q).map_or(0.0, |b| self.rewards[b])
    }

    /// Reward for a raw feature value.
    pub fn lookup_feature(&self, x: f64) -> f64 {
        self.lookup(self.quantizer.quantize(x))
    }

    /// The ternary rule installed for bin `b`.
    pub fn rule(&self, b: usize) -> BinRule {
        BinRule {
            value: self.origin + ((b as i64) << self.bin_exponent),
            mask: !(self.bin_width() - 1),
        }
    }
}

/// `k + 1` accumulators: a shared test counter and one reward sum per estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCounters {
    pub test_count: u64,
    pub reward_sums: Vec<f64>,
}

impl ScoreCounters {
    pub fn new(estimates: usize) -> Self {
        Self {
            test_count: 0,
            reward_sums: vec![0.0; estimates],
        }
    }

    pub fn reset(&mut self) {
        self.test_count = 0;
        self.reward_sums.iter_mut().for_each(|r| *r = 0.0);
    }
}

/// Accumulates one quantized test value against every installed table.
pub fn score_update(tables: &[ScoreTable], counters: &mut ScoreCounters, q: i64) {
    debug_assert_eq!(tables.len(), counters.reward_sums.len());
    counters.test_count += 1;
    for (sum, table) in counters.reward_sums.iter_mut().zip(tables) {
        *sum += table.lookup(q);
    }
}

/// `2 * reward_sum / test_count - regularization`.
pub fn empirical_mean_score(
    counters: &ScoreCounters,
    index: usize,
    regularization: f64,
) -> Result<f64, ScoringError> {
    if counters.test_count == 0 {
        return Err(ScoringError::NoTestTraffic);
    }
    let sum = counters
        .reward_sums
        .get(index)
        .ok_or(ScoringError::IndexOutOfRange {
            index,
            len: counters.reward_sums.len(),
        })?;
    Ok(2.0 * sum / counters.test_count as f64 - regularization)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kde::{ise, GridSpec};

    fn grid(lo: f64, hi: f64) -> GridSpec {
        GridSpec::new(lo, hi, 1 << 12).unwrap()
    }

    fn uniform01() -> Density {
        Density::uniform(GridSpec::new(0.0, 1.0, 1 << 10).unwrap(), 0.0, 1.0).unwrap()
    }

    #[test]
    fn regularization_of_uniforms() {
        assert!((regularization(&uniform01()) - 1.0).abs() < 1e-12);
        let u02 = Density::uniform(grid(0.0, 2.0), 0.0, 2.0).unwrap();
        assert!((regularization(&u02) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_sample_scores() {
        let u = uniform01();
        assert!((quadratic_score_sample(&u, 0.3) - 1.0).abs() < 1e-12);
        assert!((quadratic_score_sample(&u, 1.7) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_scores_of_uniforms() {
        let g = grid(0.0, 2.0);
        let u01 = Density::uniform(g, 0.0, 1.0).unwrap();
        let u02 = Density::uniform(g, 0.0, 2.0).unwrap();
        assert!((expected_score(&u01, &u01).unwrap() - 1.0).abs() < 2e-3);
        assert!((expected_score(&u02, &u01).unwrap() - 0.5).abs() < 2e-3);
        let gap = expected_score(&u01, &u01).unwrap() - expected_score(&u02, &u01).unwrap();
        assert!((gap - ise(&u02, &u01).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn expected_score_rejects_mismatched_grids() {
        let a = Density::uniform(grid(0.0, 2.0), 0.0, 1.0).unwrap();
        assert_eq!(expected_score(&a, &uniform01()), Err(ScoringError::GridMismatch));
    }

    #[test]
    fn bin_masking_example() {
        assert_eq!(masked_key(37, 3), 0b100);
        let d = Density::uniform(GridSpec::new(0.0, 1000.0, 1 << 10).unwrap(), 0.0, 1000.0).unwrap();
        let t = build_score_table(TaskId(1), &d, 3, Quantizer::IDENTITY).unwrap();
        let b = t.bin_of(37).unwrap();
        let rule = t.rule(b);
        assert_eq!(rule.value, 32);
        assert!((32..40).all(|q| rule.matches(q)));
        assert!(!rule.matches(31) && !rule.matches(40));
    }

    #[test]
    fn uniform_table_rewards() {
        let q = Quantizer::new(64.0).unwrap();
        let t = build_score_table(TaskId(1), &uniform01(), 0, q).unwrap();
        // 64 bins inside [0, 1) plus the bin holding the right endpoint.
        assert!(t.rewards()[..64].iter().all(|r| (r - 1.0).abs() < 1e-9));
        assert!((t.regularization() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn narrow_support_suggests_exponent() {
        let d = Density::uniform(GridSpec::new(0.0, 100.0, 256).unwrap(), 0.0, 100.0).unwrap();
        match build_score_table(TaskId(1), &d, 5, Quantizer::IDENTITY) {
            Err(ScoringError::SupportTooNarrow { bins, suggested, .. }) => {
                assert_eq!(bins, 4);
                assert_eq!(suggested, Some(0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn auto_exponent_fits_max_bins() {
        let d = Density::uniform(GridSpec::new(0.0, 1600.0, 256).unwrap(), 0.0, 1600.0).unwrap();
        let e = auto_bin_exponent(&d, Quantizer::IDENTITY, 256);
        assert_eq!(e, 3);
        let t = build_score_table(TaskId(1), &d, e, Quantizer::IDENTITY).unwrap();
        assert!(t.rewards().len() <= 256);
    }

    #[test]
    fn counters_accumulate() {
        let q = Quantizer::new(64.0).unwrap();
        let t = build_score_table(TaskId(1), &uniform01(), 0, q).unwrap();
        let mut c = ScoreCounters::new(1);
        score_update(std::slice::from_ref(&t), &mut c, q.quantize(0.2));
        score_update(std::slice::from_ref(&t), &mut c, q.quantize(0.6));
        assert_eq!(c.test_count, 2);
        assert!((c.reward_sums[0] - 2.0).abs() < 1e-9);
        score_update(std::slice::from_ref(&t), &mut c, q.quantize(5.0));
        assert_eq!(c.test_count, 3);
        assert!((c.reward_sums[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn mean_score_from_counters() {
        let c = ScoreCounters {
            test_count: 2,
            reward_sums: vec![2.0],
        };
        assert_eq!(empirical_mean_score(&c, 0, 1.0).unwrap(), 1.0);
        assert_eq!(
            empirical_mean_score(&ScoreCounters::new(1), 0, 1.0),
            Err(ScoringError::NoTestTraffic)
        );
        assert!(matches!(
            empirical_mean_score(&c, 3, 1.0),
            Err(ScoringError::IndexOutOfRange { .. })
        ));
    }
}
