//! Adaptive density monitoring of network traffic features.
//!
//! Densities of per-task features are learned from sampled traffic with
//! kernel density estimation, scored against unsampled traffic with the
//! quadratic scoring rule inside an emulated switch pipeline, normalized into
//! accuracies, and used to re-allocate per-task sampling rates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod controller;
pub mod dataplane;
pub mod kde;
pub mod normalizer;
pub mod scoring;
pub mod traffic;

use serde::{Deserialize, Serialize};

/// Identifier of a monitoring task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
