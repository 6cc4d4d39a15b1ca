//! Hash-indexed flowlet state, one slot per hash bucket.

use serde::{Deserialize, Serialize};

use super::packet::{FlowKey, Packet};

pub const DEFAULT_FLOWLET_SLOTS: usize = 1 << 16;
pub const DEFAULT_FLOWLET_TIMEOUT_NS: u64 = 500_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    flow: FlowKey,
    first_seen: u64,
    last_seen: u64,
    packets: u64,
    bytes: u64,
}

impl Slot {
    fn start(p: &Packet) -> Self {
        Slot {
            flow: p.flow_key(),
            first_seen: p.ts_ns,
            last_seen: p.ts_ns,
            packets: 1,
            bytes: u64::from(p.size),
        }
    }

    fn summary(&self) -> FlowletSummary {
        FlowletSummary {
            flow: self.flow,
            packets: self.packets,
            bytes: self.bytes,
            first_seen: self.first_seen,
            last_seen: self.last_seen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowletSummary {
    pub flow: FlowKey,
    pub packets: u64,
    pub bytes: u64,
    pub first_seen: u64,
    pub last_seen: u64,
}

impl FlowletSummary {
    pub fn duration_ns(&self) -> u64 {
        self.last_seen - self.first_seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowletStatus {
    /// The packet opened a flowlet; `prev` is the flowlet it displaced, if any
    /// (timed out, possibly belonging to a different flow).
    NewFlowlet { prev: Option<FlowletSummary> },
    Active,
    /// A FIN closed the flowlet. `evicted` is a timed-out flowlet displaced first.
    Ended {
        summary: FlowletSummary,
        evicted: Option<FlowletSummary>,
    },
    /// The slot holds a live flowlet of another flow; the packet is untracked.
    Collision,
}

#[derive(Debug, Clone)]
pub struct FlowletTable {
    slots: Vec<Option<Slot>>,
    timeout_ns: u64,
    collisions: u64,
}

impl FlowletTable {
    /// `slots` is rounded up to a power of two.
    pub fn new(slots: usize, timeout_ns: u64) -> Self {
        FlowletTable {
            slots: vec![None; slots.max(1).next_power_of_two()],
            timeout_ns,
            collisions: 0,
        }
    }

    pub fn timeout_ns(&self) -> u64 {
        self.timeout_ns
    }

    pub fn collisions(&self) -> u64 {
        self.collisions
    }

    pub fn live(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    fn index(&self, key: &FlowKey) -> usize {
        (key.hash64() as usize) & (self.slots.len() - 1)
    }

    /// Updates flowlet state with `p`. A gap strictly greater than the timeout
    /// starts a new flowlet.
    pub fn update(&mut self, p: &Packet) -> FlowletStatus {
        let key = p.flow_key();
        let idx = self.index(&key);
        let timeout = self.timeout_ns;
        let slot = &mut self.slots[idx];

        let (status, evicted) = match slot {
            Some(s) if p.ts_ns.saturating_sub(s.last_seen) <= timeout => {
                if s.flow != key {
                    self.collisions += 1;
                    return FlowletStatus::Collision;
                }
                s.last_seen = p.ts_ns;
                s.packets += 1;
                s.bytes += u64::from(p.size);
                (FlowletStatus::Active, None)
            }
            Some(s) => {
                let prev = s.summary();
                *s = Slot::start(p);
                (FlowletStatus::NewFlowlet { prev: Some(prev) }, Some(prev))
            }
            None => {
                *slot = Some(Slot::start(p));
                (FlowletStatus::NewFlowlet { prev: None }, None)
            }
        };

        if p.fin {
            let summary = slot.take().expect("slot just written").summary();
            return FlowletStatus::Ended { summary, evicted };
        }
        status
    }

    /// Removes and returns every live flowlet, in slot order.
    pub fn flush(&mut self) -> Vec<FlowletSummary> {
        self.slots
            .iter_mut()
            .filter_map(|s| s.take().map(|s| s.summary()))
            .collect()
    }
}
