//! Parameterized ground-truth feature distributions.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::TrafficError;
use crate::dataplane::FeatureKind;
use crate::kde::{Density, GridSpec, DEFAULT_GRID_POINTS};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const MAX_REJECTIONS: usize = 10_000;

/// One mixture component, in the feature's quantized unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    LogNormal { median: f64, sigma: f64 },
    TruncatedNormal { mean: f64, sd: f64 },
    Exponential { mean: f64 },
    /// A point mass smoothed into a narrow Gaussian bump.
    PointMassSmoothed { at: f64, width: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Family {
    fn validate(&self) -> Result<(), TrafficError> {
        let ok = match *self {
            Family::LogNormal { median, sigma } => median > 0.0 && sigma > 0.0,
            Family::TruncatedNormal { mean, sd } => mean.is_finite() && sd > 0.0,
            Family::Exponential { mean } => mean > 0.0,
            Family::PointMassSmoothed { at, width } => at.is_finite() && width > 0.0,
            Family::Uniform { lo, hi } => lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(TrafficError::InvalidSpec(format!("bad component parameters: {self:?}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Family::LogNormal { median, sigma } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let z = (x / median).ln() / sigma;
                (-0.5 * z * z).exp() / (x * sigma * SQRT_2PI)
            }
            Family::TruncatedNormal { mean: mu, sd } | Family::PointMassSmoothed { at: mu, width: sd } => {
                let z = (x - mu) / sd;
                (-0.5 * z * z).exp() / (sd * SQRT_2PI)
            }
            Family::Exponential { mean } => {
                if x < 0.0 {
                    0.0
                } else {
                    (-x / mean).exp() / mean
                }
            }
            Family::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Family::LogNormal { median, sigma } => LogNormal::new(median.ln(), sigma)
                .expect("validated")
                .sample(rng),
            Family::TruncatedNormal { mean: mu, sd } | Family::PointMassSmoothed { at: mu, width: sd } => {
                Normal::new(mu, sd).expect("validated").sample(rng)
            }
            Family::Exponential { mean } => Exp::new(1.0 / mean).expect("validated").sample(rng),
            Family::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    #[serde(flatten)]
    pub family: Family,
}

/// A mixture of components truncated to `support`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub feature: FeatureKind,
    pub components: Vec<Component>,
    pub support: (f64, f64),
}

impl GroundTruthSpec {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.components.is_empty() {
            return Err(TrafficError::InvalidSpec("mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.components.iter().any(|c| c.weight < 0.0) {
            return Err(TrafficError::InvalidSpec(format!(
                "mixture weights must be non-negative and sum to 1, got {total}"
            )));
        }
        let (lo, hi) = self.support;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(TrafficError::InvalidSpec(format!("bad support [{lo}, {hi}]")));
        }
        self.components.iter().try_for_each(|c| c.family.validate())
    }

    /// Mixture density before truncation.
    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.support.0 || x > self.support.1 {
            return 0.0;
        }
        self.components.iter().map(|c| c.weight * c.family.pdf(x)).sum()
    }

    /// Draws one value, rejecting draws outside the support.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.support;
        for _ in 0..MAX_REJECTIONS {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = &self.components[self.components.len() - 1];
            for c in &self.components {
                acc += c.weight;
                if u < acc {
                    chosen = c;
                    break;
                }
            }
            let x = chosen.family.draw(rng);
            if x >= lo && x <= hi {
                return x;
            }
        }
        lo + 0.5 * (hi - lo)
    }

    pub fn draw_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// Evaluation grid: the support widened by 10% on each side.
    pub fn default_grid(&self) -> GridSpec {
        let (lo, hi) = self.support;
        let margin = 0.1 * (hi - lo);
        GridSpec::new(lo - margin, hi + margin, DEFAULT_GRID_POINTS).expect("validated support")
    }
}

/// The mixture evaluated on `grid` and normalized.
pub fn ground_truth_density(spec: &GroundTruthSpec, grid: GridSpec) -> Result<Density, TrafficError> {
    spec.validate()?;
    Density::from_fn(grid, |x| spec.pdf(x), grid.spacing(), 0).map_err(TrafficError::from)
}

fn lognormal(weight: f64, median: f64, sigma: f64) -> Component {
    Component {
        weight,
        family: Family::LogNormal { median, sigma },
    }
}

fn normal(weight: f64, mean: f64, sd: f64) -> Component {
    Component {
        weight,
        family: Family::TruncatedNormal { mean, sd },
    }
}

fn spike(weight: f64, at: f64, width: f64) -> Component {
    Component {
        weight,
        family: Family::PointMassSmoothed { at, width },
    }
}

/// Packet sizes in bytes: a large peak of small packets, a smaller peak at the
/// maximum frame size, and a spread of sizes in between.
pub fn packet_size_truth() -> GroundTruthSpec {
    GroundTruthSpec {
        feature: FeatureKind::PacketSize,
        components: vec![spike(0.5, 64.0, 8.0), lognormal(0.2, 400.0, 0.5), spike(0.3, 1500.0, 12.0)],
        support: (0.0, 1600.0),
    }
}

/// Inter-arrival times in microseconds.
pub fn inter_arrival_truth() -> GroundTruthSpec {
    GroundTruthSpec {
        feature: FeatureKind::InterArrivalTime,
        components: vec![lognormal(0.6, 800.0, 0.7), lognormal(0.4, 15_000.0, 0.9)],
        support: (0.0, 200_000.0),
    }
}

/// Packets per flowlet.
pub fn flowlet_packets_truth() -> GroundTruthSpec {
    GroundTruthSpec {
        feature: FeatureKind::FlowletPackets,
        components: vec![lognormal(0.7, 4.0, 0.5), lognormal(0.3, 40.0, 0.6)],
        support: (0.0, 300.0),
    }
}

/// Bytes per flowlet: heavy tailed, up to hundreds of thousands of bytes.
pub fn flowlet_bytes_truth() -> GroundTruthSpec {
    GroundTruthSpec {
        feature: FeatureKind::FlowletBytes,
        components: vec![lognormal(1.0, 4_000.0, 1.2)],
        support: (0.0, 400_000.0),
    }
}

/// Flowlet durations in microseconds, shorter than the default 500 ms gap.
pub fn flowlet_duration_truth() -> GroundTruthSpec {
    GroundTruthSpec {
        feature: FeatureKind::FlowletDuration,
        components: vec![
            lognormal(0.45, 3_000.0, 0.8),
            normal(0.35, 120_000.0, 30_000.0),
            normal(0.20, 300_000.0, 40_000.0),
        ],
        support: (0.0, 450_000.0),
    }
}

/// The five shipped ground truths, one per feature.
pub fn builtin_truths() -> Vec<GroundTruthSpec> {
    vec![
        packet_size_truth(),
        inter_arrival_truth(),
        flowlet_packets_truth(),
        flowlet_bytes_truth(),
        flowlet_duration_truth(),
    ]
}
