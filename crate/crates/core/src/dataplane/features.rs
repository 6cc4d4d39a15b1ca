use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::flowlet::{FlowletStatus, FlowletSummary};
use super::packet::Packet;
use super::DataplaneError;
use crate::TaskId;

/// Per-packet or per-flowlet feature. Values are integers in the unit given
/// by [`FeatureKind::unit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    PacketSize,
    InterArrivalTime,
    FlowletPackets,
    FlowletBytes,
    FlowletDuration,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::PacketSize,
        FeatureKind::InterArrivalTime,
        FeatureKind::FlowletPackets,
        FeatureKind::FlowletBytes,
        FeatureKind::FlowletDuration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::PacketSize => "packet_size",
            FeatureKind::InterArrivalTime => "inter_arrival_time",
            FeatureKind::FlowletPackets => "flowlet_packets",
            FeatureKind::FlowletBytes => "flowlet_bytes",
            FeatureKind::FlowletDuration => "flowlet_duration",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            FeatureKind::PacketSize | FeatureKind::FlowletBytes => "bytes",
            FeatureKind::InterArrivalTime | FeatureKind::FlowletDuration => "us",
            FeatureKind::FlowletPackets => "packets",
        }
    }

    pub fn needs_flowlet(self) -> bool {
        matches!(
            self,
            FeatureKind::FlowletPackets | FeatureKind::FlowletBytes | FeatureKind::FlowletDuration
        )
    }

    /// Accepts the canonical names plus `burst_size` and `burst_duration`.
    pub fn parse(name: &str) -> Result<FeatureKind, DataplaneError> {
        match name {
            "burst_size" => return Ok(FeatureKind::FlowletBytes),
            "burst_duration" => return Ok(FeatureKind::FlowletDuration),
            "queue_time" | "queue_length" => {
                return Err(DataplaneError::UnsupportedFeature(format!(
                    "{name} needs switch queue metadata that a packet trace does not carry"
                )))
            }
            _ => {}
        }
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| DataplaneError::UnsupportedFeature(name.to_string()))
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEvent {
    pub task_id: TaskId,
    pub value: u64,
    pub ts_ns: u64,
}

pub fn flowlet_value(kind: FeatureKind, s: &FlowletSummary) -> Option<u64> {
    match kind {
        FeatureKind::FlowletPackets => Some(s.packets),
        FeatureKind::FlowletBytes => Some(s.bytes),
        FeatureKind::FlowletDuration => Some(s.duration_ns() / 1_000),
        _ => None,
    }
}

/// Feature events for one summary, attributed to `tasks`.
pub fn summary_events(summary: &FlowletSummary, tasks: &[(TaskId, FeatureKind)], ts_ns: u64) -> Vec<FeatureEvent> {
    tasks
        .iter()
        .filter_map(|&(task_id, kind)| {
            flowlet_value(kind, summary).map(|value| FeatureEvent { task_id, value, ts_ns })
        })
        .collect()
}

/// Feature events triggered by `packet` for the active `tasks`. Flowlet
/// summaries of other flows carried in `status` are not attributed here.
/// `last_seen` holds each task's previous packet time for inter-arrival times.
pub fn extract_features(
    packet: &Packet,
    status: Option<&FlowletStatus>,
    tasks: &[(TaskId, FeatureKind)],
    last_seen: &mut BTreeMap<TaskId, u64>,
) -> Vec<FeatureEvent> {
    let mut events = Vec::new();
    let ts_ns = packet.ts_ns;
    for &(task_id, kind) in tasks {
        match kind {
            FeatureKind::PacketSize => events.push(FeatureEvent {
                task_id,
                value: u64::from(packet.size),
                ts_ns,
            }),
            FeatureKind::InterArrivalTime => {
                if let Some(prev) = last_seen.insert(task_id, ts_ns) {
                    events.push(FeatureEvent {
                        task_id,
                        value: ts_ns.saturating_sub(prev) / 1_000,
                        ts_ns,
                    });
                }
            }
            _ => {}
        }
    }
    let own = packet.flow_key();
    let mut completed: Vec<&FlowletSummary> = Vec::new();
    match status {
        Some(FlowletStatus::NewFlowlet { prev: Some(s) }) => completed.push(s),
        Some(FlowletStatus::Ended { summary, evicted }) => {
            completed.extend(evicted);
            completed.push(summary);
        }
        _ => {}
    }
    for s in completed.into_iter().filter(|s| s.flow == own) {
        events.extend(summary_events(s, tasks, ts_ns));
    }
    events
}
