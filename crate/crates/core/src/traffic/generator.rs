//! Flow-level trace synthesis. Packet sizes, packets per flowlet and flowlet
//! durations follow the configured ground truths; flowlet bytes and
//! inter-arrival times follow from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

use super::truth::{
    flowlet_duration_truth, flowlet_packets_truth, packet_size_truth, Component, Family,
    GroundTruthSpec,
};
use super::TrafficError;
use crate::dataplane::{FeatureKind, Ipv4Prefix, Packet, PROTO_TCP, PROTO_UDP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficClass {
    pub name: String,
    pub src: Ipv4Prefix,
    pub dst: Ipv4Prefix,
    /// Share of TCP flows; the rest are UDP.
    pub tcp_fraction: f64,
    /// Share of flows with a destination port below 1024.
    #[serde(default = "default_low_port_fraction")]
    pub low_port_fraction: f64,
    pub flows_per_sec: f64,
    #[serde(default = "default_flowlets_per_flow")]
    pub mean_flowlets_per_flow: f64,
    pub packet_size: GroundTruthSpec,
    pub flowlet_packets: GroundTruthSpec,
    pub flowlet_duration: GroundTruthSpec,
}

fn default_low_port_fraction() -> f64 {
    0.5
}

fn default_flowlets_per_flow() -> f64 {
    3.0
}

fn default_gap_ms() -> f64 {
    500.0
}

fn default_extra_gap_ms() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub seed: u64,
    pub duration_s: f64,
    /// Flowlets of a flow are separated by more than this idle time.
    #[serde(default = "default_gap_ms")]
    pub flowlet_gap_ms: f64,
    /// Mean of the exponential extra idle time added to each gap.
    #[serde(default = "default_extra_gap_ms")]
    pub mean_extra_gap_ms: f64,
    pub classes: Vec<TrafficClass>,
}

impl TraceSpec {
    pub fn from_toml(text: &str) -> Result<Self, TrafficError> {
        let spec: TraceSpec = toml::from_str(text).map_err(|e| TrafficError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("trace specs serialize")
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: String| Err(TrafficError::InvalidSpec(m));
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s must be non-negative, got {}", self.duration_s));
        }
        if !(self.flowlet_gap_ms >= 0.0 && self.mean_extra_gap_ms > 0.0) {
            return bad("flowlet gaps must be non-negative and mean_extra_gap_ms positive".into());
        }
        if self.classes.is_empty() {
            return bad("no traffic classes".into());
        }
        for c in &self.classes {
            if !(0.0..=1.0).contains(&c.tcp_fraction) || !(0.0..=1.0).contains(&c.low_port_fraction) {
                return bad(format!("class {}: fractions must lie in [0, 1]", c.name));
            }
            if !(c.flows_per_sec > 0.0) || !(c.mean_flowlets_per_flow >= 1.0) {
                return bad(format!(
                    "class {}: flows_per_sec must be positive and mean_flowlets_per_flow at least 1",
                    c.name
                ));
            }
            for (spec, kind) in [
                (&c.packet_size, FeatureKind::PacketSize),
                (&c.flowlet_packets, FeatureKind::FlowletPackets),
                (&c.flowlet_duration, FeatureKind::FlowletDuration),
            ] {
                if spec.feature != kind {
                    return bad(format!("class {}: expected a {kind} truth, got {}", c.name, spec.feature));
                }
                spec.validate()?;
            }
            if c.flowlet_duration.support.1 * 1e-3 >= self.flowlet_gap_ms {
                return bad(format!(
                    "class {}: flowlet durations up to {} us could contain a gap above {} ms",
                    c.name, c.flowlet_duration.support.1, self.flowlet_gap_ms
                ));
            }
        }
        Ok(())
    }
}

fn random_in(prefix: Ipv4Prefix, rng: &mut ChaCha8Rng) -> u32 {
    let host_bits = (prefix.size() - 1) as u32;
    prefix.addr | (rng.random::<u32>() & host_bits)
}

struct Tagged {
    packet: Packet,
    flow: u64,
    seq: u32,
}

fn class_packets(spec: &TraceSpec, class: &TrafficClass, rng: &mut ChaCha8Rng, flow_base: &mut u64) -> Vec<Tagged> {
    let end_ns = (spec.duration_s * 1e9) as u64;
    let gap_ns = (spec.flowlet_gap_ms * 1e6) as u64 + 1_000;
    let arrivals = Exp::new(class.flows_per_sec).expect("validated");
    let extra_gap = Exp::new(1.0 / (spec.mean_extra_gap_ms * 1e6)).expect("validated");
    let flowlets = Geometric::new(1.0 / class.mean_flowlets_per_flow).expect("validated");

    let mut out = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += arrivals.sample(rng);
        let start_ns = (t * 1e9) as u64;
        if start_ns >= end_ns {
            break;
        }
        let flow = *flow_base;
        *flow_base += 1;
        let tcp = rng.random_bool(class.tcp_fraction);
        let dport = if rng.random_bool(class.low_port_fraction) {
            rng.random_range(1..1024)
        } else {
            rng.random_range(1024..=u16::MAX)
        };
        let template = Packet {
            ts_ns: 0,
            src: random_in(class.src, rng),
            dst: random_in(class.dst, rng),
            proto: if tcp { PROTO_TCP } else { PROTO_UDP },
            sport: rng.random_range(1024..=u16::MAX),
            dport,
            size: 0,
            fin: false,
        };

        let count = 1 + flowlets.sample(rng);
        let mut cursor = start_ns;
        let mut seq = 0u32;
        for j in 0..count {
            let packets = class.flowlet_packets.draw(rng).round().max(2.0) as usize;
            let duration_us = class.flowlet_duration.draw(rng).floor() as u64;
            let mut offsets: Vec<u64> = (0..packets - 2).map(|_| rng.random_range(0..=duration_us)).collect();
            offsets.push(0);
            offsets.push(duration_us);
            offsets.sort_unstable();
            let last_flowlet = j + 1 == count;
            for (i, off) in offsets.iter().enumerate() {
                let ts_ns = cursor + off * 1_000;
                let size = class.packet_size.draw(rng).floor().max(1.0) as u32;
                if ts_ns < end_ns {
                    out.push(Tagged {
                        packet: Packet {
                            ts_ns,
                            size,
                            fin: tcp && last_flowlet && i + 1 == offsets.len(),
                            ..template
                        },
                        flow,
                        seq,
                    });
                }
                seq += 1;
            }
            cursor += duration_us * 1_000 + gap_ns + extra_gap.sample(rng) as u64;
        }
    }
    out
}

/// Generates a time-ordered trace. Identical specs give identical traces.
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<Packet>, TrafficError> {
    spec.validate()?;
    let mut tagged = Vec::new();
    let mut flow_base = 0u64;
    for (i, class) in spec.classes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        tagged.extend(class_packets(spec, class, &mut rng, &mut flow_base));
    }
    tagged.sort_unstable_by_key(|t| (t.packet.ts_ns, t.flow, t.seq));
    Ok(tagged.into_iter().map(|t| t.packet).collect())
}

/// Two classes: TCP web-like traffic from 42.0.0.0/8 using the built-in
/// truths, and mixed bulk traffic from 99.0.0.0/8 with larger packets and
/// longer flowlets.
pub fn builtin_trace_spec(seed: u64, duration_s: f64) -> TraceSpec {
    let bulk_sizes = GroundTruthSpec {
        components: vec![
            Component {
                weight: 0.2,
                family: Family::PointMassSmoothed { at: 64.0, width: 8.0 },
            },
            Component {
                weight: 0.8,
                family: Family::PointMassSmoothed { at: 1400.0, width: 40.0 },
            },
        ],
        ..packet_size_truth()
    };
    let bulk_packets = GroundTruthSpec {
        components: vec![Component {
            weight: 1.0,
            family: Family::LogNormal { median: 20.0, sigma: 0.7 },
        }],
        ..flowlet_packets_truth()
    };
    let bulk_durations = GroundTruthSpec {
        components: vec![Component {
            weight: 1.0,
            family: Family::LogNormal { median: 50_000.0, sigma: 0.6 },
        }],
        ..flowlet_duration_truth()
    };
    TraceSpec {
        seed,
        duration_s,
        flowlet_gap_ms: default_gap_ms(),
        mean_extra_gap_ms: default_extra_gap_ms(),
        classes: vec![
            TrafficClass {
                name: "web".into(),
                src: "42.0.0.0/8".parse().expect("literal"),
                dst: "10.0.0.0/8".parse().expect("literal"),
                tcp_fraction: 1.0,
                low_port_fraction: 1.0,
                flows_per_sec: 200.0,
                mean_flowlets_per_flow: 4.0,
                packet_size: packet_size_truth(),
                flowlet_packets: flowlet_packets_truth(),
                flowlet_duration: flowlet_duration_truth(),
            },
            TrafficClass {
                name: "bulk".into(),
                src: "99.0.0.0/8".parse().expect("literal"),
                dst: "10.0.0.0/8".parse().expect("literal"),
                tcp_fraction: 0.5,
                low_port_fraction: 0.2,
                flows_per_sec: 50.0,
                mean_flowlets_per_flow: 3.0,
                packet_size: bulk_sizes,
                flowlet_packets: bulk_packets,
                flowlet_duration: bulk_durations,
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::{FlowletStatus, FlowletTable, DEFAULT_FLOWLET_TIMEOUT_NS};

    #[test]
    fn deterministic_and_ordered() {
        let spec = builtin_trace_spec(7, 2.0);
        let a = generate_trace(&spec).unwrap();
        let b = generate_trace(&spec).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.windows(2).all(|w| w[0].ts_ns <= w[1].ts_ns));
        assert!(a.iter().all(|p| p.ts_ns < 2_000_000_000));
    }

    #[test]
    fn zero_duration_is_empty() {
        assert!(generate_trace(&builtin_trace_spec(7, 0.0)).unwrap().is_empty());
    }

    #[test]
    fn toml_round_trip() {
        let spec = builtin_trace_spec(1, 3.0);
        assert_eq!(TraceSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }

    #[test]
    fn durations_must_fit_inside_gap() {
        let mut spec = builtin_trace_spec(1, 1.0);
        spec.flowlet_gap_ms = 100.0;
        assert!(matches!(spec.validate(), Err(TrafficError::InvalidSpec(_))));
    }

    #[test]
    fn flowlets_are_recovered() {
        let mut spec = builtin_trace_spec(3, 20.0);
        spec.classes.truncate(1);
        let trace = generate_trace(&spec).unwrap();
        let mut table = FlowletTable::new(1 << 16, DEFAULT_FLOWLET_TIMEOUT_NS);
        let mut ended = 0usize;
        let mut too_short = 0usize;
        for p in &trace {
            let status = table.update(p);
            let summary = match status {
                FlowletStatus::NewFlowlet { prev: Some(s) } => Some(s),
                FlowletStatus::Ended { summary, .. } => Some(summary),
                _ => None,
            };
            if let Some(s) = summary {
                ended += 1;
                too_short += usize::from(s.packets < 2);
            }
        }
        assert!(ended > 1_000);
        assert!(too_short * 100 < ended, "{too_short} of {ended}");
    }
}
