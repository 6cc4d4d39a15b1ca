//! Synthetic traffic with known feature distributions.

mod generator;
mod truth;

pub use generator::{builtin_trace_spec, generate_trace, TraceSpec, TrafficClass};
pub use truth::{
    builtin_truths, flowlet_bytes_truth, flowlet_duration_truth, flowlet_packets_truth,
    ground_truth_density, inter_arrival_truth, packet_size_truth, Component, Family,
    GroundTruthSpec,
};

use crate::kde::{Density, KdeError};
use crate::scoring::{expected_score, regularization};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrafficError {
    #[error("invalid traffic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Kde(#[from] KdeError),
}

/// Accuracy of `estimate` against the known `truth`: its expected quadratic
/// score divided by the truth's own, `(2 ∫ e f - ∫ e²) / ∫ f²`. The estimate
/// is resampled onto the truth's grid first.
pub fn true_accuracy(estimate: &Density, truth: &Density) -> Result<f64, TrafficError> {
    let on_grid = if estimate.grid() == truth.grid() {
        estimate.clone()
    } else {
        estimate.resample(*truth.grid())?
    };
    let score = expected_score(&on_grid, truth).expect("same grid");
    Ok(score / regularization(truth))
}
