//! Ternary match rules compiled from five-tuple constraints.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::packet::{FlowKey, PROTO_ICMP, PROTO_TCP, PROTO_UDP};
use crate::TaskId;

/// An IPv4 prefix such as `42.0.0.0/8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ipv4Prefix {
    pub addr: u32,
    pub len: u8,
}

impl Ipv4Prefix {
    pub fn new(addr: u32, len: u8) -> Option<Self> {
        (len <= 32).then(|| Ipv4Prefix {
            addr: addr & prefix_mask(len),
            len,
        })
    }

    pub fn mask(&self) -> u32 {
        prefix_mask(self.len)
    }

    pub fn contains(&self, ip: u32) -> bool {
        ip & self.mask() == self.addr
    }

    pub fn size(&self) -> u64 {
        1u64 << (32 - self.len)
    }

    fn intersect(self, other: Ipv4Prefix) -> Option<Ipv4Prefix> {
        let (short, long) = if self.len <= other.len { (self, other) } else { (other, self) };
        short.contains(long.addr).then_some(long)
    }
}

fn prefix_mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len)
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", Ipv4Addr::from(self.addr), self.len)
    }
}

impl std::str::FromStr for Ipv4Prefix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => (a, l.parse::<u8>().map_err(|_| format!("bad prefix length in `{s}`"))?),
            None => (s, 32),
        };
        let addr: Ipv4Addr = addr.parse().map_err(|_| format!("bad IPv4 address in `{s}`"))?;
        Ipv4Prefix::new(addr.into(), len).ok_or_else(|| format!("prefix length above 32 in `{s}`"))
    }
}

impl TryFrom<String> for Ipv4Prefix {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Ipv4Prefix> for String {
    fn from(p: Ipv4Prefix) -> String {
        p.to_string()
    }
}

/// Inclusive port range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortRange {
    pub lo: u16,
    pub hi: u16,
}

impl PortRange {
    pub const ANY: PortRange = PortRange { lo: 0, hi: u16::MAX };

    fn intersect(self, other: PortRange) -> Option<PortRange> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(PortRange { lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldMatch {
    Src(Ipv4Prefix),
    Dst(Ipv4Prefix),
    Proto(u8),
    Sport(PortRange),
    Dport(PortRange),
}

pub fn proto_name(proto: u8) -> Option<&'static str> {
    match proto {
        PROTO_TCP => Some("TCP"),
        PROTO_UDP => Some("UDP"),
        PROTO_ICMP => Some("ICMP"),
        _ => None,
    }
}

pub fn parse_proto(s: &str) -> Option<u8> {
    match s.to_ascii_uppercase().as_str() {
        "TCP" => Some(PROTO_TCP),
        "UDP" => Some(PROTO_UDP),
        "ICMP" => Some(PROTO_ICMP),
        other => other.parse().ok(),
    }
}

/// A conjunction of field matches.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    pub fields: Vec<FieldMatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Reduced {
    src: Ipv4Prefix,
    dst: Ipv4Prefix,
    proto: Option<u8>,
    sport: PortRange,
    dport: PortRange,
}

impl Constraint {
    pub fn new(fields: Vec<FieldMatch>) -> Self {
        Constraint { fields }
    }

    /// Intersects repeated fields; `None` if the conjunction is unsatisfiable.
    fn reduce(&self) -> Option<Reduced> {
        let any = Ipv4Prefix { addr: 0, len: 0 };
        let mut r = Reduced {
            src: any,
            dst: any,
            proto: None,
            sport: PortRange::ANY,
            dport: PortRange::ANY,
        };
        for f in &self.fields {
            match *f {
                FieldMatch::Src(p) => r.src = r.src.intersect(p)?,
                FieldMatch::Dst(p) => r.dst = r.dst.intersect(p)?,
                FieldMatch::Proto(p) => match r.proto {
                    Some(q) if q != p => return None,
                    _ => r.proto = Some(p),
                },
                FieldMatch::Sport(p) => r.sport = r.sport.intersect(p)?,
                FieldMatch::Dport(p) => r.dport = r.dport.intersect(p)?,
            }
        }
        Some(r)
    }

    pub fn matches(&self, key: &FlowKey) -> bool {
        self.fields.iter().all(|f| match *f {
            FieldMatch::Src(p) => p.contains(key.src),
            FieldMatch::Dst(p) => p.contains(key.dst),
            FieldMatch::Proto(p) => key.proto == p,
            FieldMatch::Sport(r) => (r.lo..=r.hi).contains(&key.sport),
            FieldMatch::Dport(r) => (r.lo..=r.hi).contains(&key.dport),
        })
    }
}

/// Value/mask pair; a key matches when `key & mask == value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ternary<T> {
    pub value: T,
    pub mask: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TernaryRule {
    pub src: Ternary<u32>,
    pub dst: Ternary<u32>,
    pub proto: Ternary<u8>,
    pub sport: Ternary<u16>,
    pub dport: Ternary<u16>,
    pub tasks: BTreeSet<TaskId>,
    pub priority: u32,
}

impl TernaryRule {
    pub fn matches(&self, key: &FlowKey) -> bool {
        key.src & self.src.mask == self.src.value
            && key.dst & self.dst.mask == self.dst.value
            && key.proto & self.proto.mask == self.proto.value
            && key.sport & self.sport.mask == self.sport.value
            && key.dport & self.dport.mask == self.dport.value
    }
}

/// Minimal set of value/mask prefixes covering `[lo, hi]` exactly.
pub fn range_to_prefixes(range: PortRange) -> Vec<Ternary<u16>> {
    let mut out = Vec::new();
    let mut lo = u32::from(range.lo);
    let hi = u32::from(range.hi);
    while lo <= hi {
        let mut size = if lo == 0 { 1u32 << 16 } else { 1u32 << lo.trailing_zeros() };
        while lo + size - 1 > hi {
            size >>= 1;
        }
        let mask = !(size - 1) & 0xffff;
        out.push(Ternary {
            value: lo as u16,
            mask: mask as u16,
        });
        lo += size;
    }
    out
}

/// Compiles constraints into ternary rules. Rules of constraint `i` carry
/// priority `i` and the ids of the tasks attached to that constraint.
pub fn compile_rules(constraints: &[(Constraint, BTreeSet<TaskId>)]) -> Vec<TernaryRule> {
    let mut rules = Vec::new();
    for (priority, (constraint, tasks)) in constraints.iter().enumerate() {
        let Some(r) = constraint.reduce() else {
            continue;
        };
        let proto = match r.proto {
            Some(p) => Ternary { value: p, mask: 0xff },
            None => Ternary { value: 0, mask: 0 },
        };
        let sports = range_to_prefixes(r.sport);
        let dports = range_to_prefixes(r.dport);
        for &sport in &sports {
            for &dport in &dports {
                rules.push(TernaryRule {
                    src: Ternary {
                        value: r.src.addr,
                        mask: r.src.mask(),
                    },
                    dst: Ternary {
                        value: r.dst.addr,
                        mask: r.dst.mask(),
                    },
                    proto,
                    sport,
                    dport,
                    tasks: tasks.clone(),
                    priority: priority as u32,
                });
            }
        }
    }
    rules
}

/// Union of the task ids of every rule matching `key`.
pub fn match_tasks(key: &FlowKey, rules: &[TernaryRule]) -> BTreeSet<TaskId> {
    let mut out = BTreeSet::new();
    for rule in rules.iter().filter(|r| r.matches(key)) {
        out.extend(rule.tasks.iter().copied());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(src: &str, proto: u8, sport: u16, dport: u16) -> FlowKey {
        FlowKey {
            src: src.parse::<Ipv4Addr>().unwrap().into(),
            dst: 0x0a00_0001,
            proto,
            sport,
            dport,
        }
    }

    fn tasks(ids: &[u32]) -> BTreeSet<TaskId> {
        ids.iter().map(|&i| TaskId(i)).collect()
    }

    #[test]
    fn overlapping_constraints_union_tasks() {
        let net: Ipv4Prefix = "42.0.0.0/8".parse().unwrap();
        let rules = compile_rules(&[
            (Constraint::new(vec![FieldMatch::Src(net)]), tasks(&[1])),
            (Constraint::new(vec![FieldMatch::Proto(PROTO_TCP)]), tasks(&[2])),
        ]);
        assert_eq!(match_tasks(&key("42.1.2.3", PROTO_TCP, 1, 2), &rules), tasks(&[1, 2]));
        assert_eq!(match_tasks(&key("42.1.2.3", PROTO_UDP, 1, 2), &rules), tasks(&[1]));
        assert!(match_tasks(&key("43.0.0.1", PROTO_UDP, 1, 2), &rules).is_empty());
    }

    #[test]
    fn port_range_prefix_cover() {
        let p = range_to_prefixes(PortRange { lo: 0, hi: 1023 });
        assert_eq!(p, vec![Ternary { value: 0, mask: 0xfc00 }]);
        assert_eq!(range_to_prefixes(PortRange::ANY), vec![Ternary { value: 0, mask: 0 }]);
        let odd = range_to_prefixes(PortRange { lo: 3, hi: 10 });
        assert_eq!(odd.len(), 4);
    }

    #[test]
    fn cover_is_exact() {
        for (lo, hi) in [(1u16, 1u16), (5, 300), (1000, 65535), (65535, 65535), (0, 1)] {
            let cover = range_to_prefixes(PortRange { lo, hi });
            for port in 0..=u16::MAX {
                let hit = cover.iter().filter(|t| port & t.mask == t.value).count();
                assert_eq!(hit, usize::from((lo..=hi).contains(&port)), "{lo}-{hi} at {port}");
            }
        }
    }

    #[test]
    fn unsatisfiable_conjunction_has_no_rules() {
        let c = Constraint::new(vec![FieldMatch::Proto(PROTO_TCP), FieldMatch::Proto(PROTO_UDP)]);
        assert!(compile_rules(&[(c, tasks(&[1]))]).is_empty());
        let a: Ipv4Prefix = "10.0.0.0/8".parse().unwrap();
        let b: Ipv4Prefix = "11.0.0.0/8".parse().unwrap();
        let c = Constraint::new(vec![FieldMatch::Src(a), FieldMatch::Src(b)]);
        assert!(compile_rules(&[(c, tasks(&[1]))]).is_empty());
    }

    #[test]
    fn prefix_parse_and_display() {
        let p: Ipv4Prefix = "42.7.1.9/8".parse().unwrap();
        assert_eq!(p.to_string(), "42.0.0.0/8");
        assert!("1.2.3.4/33".parse::<Ipv4Prefix>().is_err());
        assert_eq!("1.2.3.4".parse::<Ipv4Prefix>().unwrap().len, 32);
    }
}
