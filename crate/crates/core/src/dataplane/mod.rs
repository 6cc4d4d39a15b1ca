//! Emulated switch data plane.

mod features;
mod flowlet;
mod meter;
mod packet;
mod pipeline;
mod ternary;

pub use features::{extract_features, flowlet_value, summary_events, FeatureEvent, FeatureKind};
pub use flowlet::{
    FlowletStatus, FlowletSummary, FlowletTable, DEFAULT_FLOWLET_SLOTS, DEFAULT_FLOWLET_TIMEOUT_NS,
};
pub use meter::{Decision, Meter};
pub use packet::{read_trace, write_trace, FlowKey, Packet, PROTO_ICMP, PROTO_TCP, PROTO_UDP};
pub use pipeline::{Pipeline, PipelineConfig, StepReport, TaskReport, TaskStepStats};
pub use ternary::{
    compile_rules, match_tasks, parse_proto, proto_name, range_to_prefixes, Constraint, FieldMatch,
    Ipv4Prefix, PortRange, Ternary, TernaryRule,
};

use crate::TaskId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataplaneError {
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(String),
    #[error("unsupported feature `{0}`")]
    UnsupportedFeature(String),
    #[error("task {0} is not configured")]
    UnknownTask(TaskId),
    #[error("task {0} is configured twice")]
    DuplicateTask(TaskId),
}
