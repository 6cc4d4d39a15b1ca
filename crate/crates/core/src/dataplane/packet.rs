use std::io::{Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::DataplaneError;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// A packet header as seen by the emulated switch. Timestamps are nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub ts_ns: u64,
    pub src: u32,
    pub dst: u32,
    pub proto: u8,
    pub sport: u16,
    pub dport: u16,
    pub size: u32,
    pub fin: bool,
}

impl Packet {
    pub fn flow_key(&self) -> FlowKey {
        FlowKey {
            src: self.src,
            dst: self.dst,
            proto: self.proto,
            sport: self.sport,
            dport: self.dport,
        }
    }
}

/// Five-tuple identifying a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: u32,
    pub dst: u32,
    pub proto: u8,
    pub sport: u16,
    pub dport: u16,
}

impl FlowKey {
    /// Deterministic 64-bit mix of the five-tuple.
    pub fn hash64(&self) -> u64 {
        let mut z = (u64::from(self.src) << 32 | u64::from(self.dst))
            ^ (u64::from(self.sport) << 40 | u64::from(self.dport) << 16 | u64::from(self.proto))
                .rotate_left(17);
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    ts_ns: u64,
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    proto: u8,
    sport: u16,
    dport: u16,
    size: u32,
    fin: u8,
}

/// Reads a trace CSV with header `ts_ns,src_ip,dst_ip,proto,sport,dport,size,fin`.
/// Timestamps must be non-decreasing.
pub fn read_trace<R: Read>(reader: R) -> Result<Vec<Packet>, DataplaneError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut packets = Vec::new();
    let mut last = 0u64;
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| DataplaneError::Trace {
            line: i + 2,
            message: e.to_string(),
        })?;
        if row.ts_ns < last {
            return Err(DataplaneError::Trace {
                line: i + 2,
                message: format!("timestamp {} precedes {}", row.ts_ns, last),
            });
        }
        last = row.ts_ns;
        packets.push(Packet {
            ts_ns: row.ts_ns,
            src: row.src_ip.into(),
            dst: row.dst_ip.into(),
            proto: row.proto,
            sport: row.sport,
            dport: row.dport,
            size: row.size,
            fin: row.fin != 0,
        });
    }
    Ok(packets)
}

pub fn write_trace<W: Write>(writer: W, packets: &[Packet]) -> Result<(), DataplaneError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for p in packets {
        wtr.serialize(Row {
            ts_ns: p.ts_ns,
            src_ip: p.src.into(),
            dst_ip: p.dst.into(),
            proto: p.proto,
            sport: p.sport,
            dport: p.dport,
            size: p.size,
            fin: u8::from(p.fin),
        })
        .map_err(|e| DataplaneError::Io(e.to_string()))?;
    }
    wtr.flush().map_err(|e| DataplaneError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let packets = vec![
            Packet {
                ts_ns: 10,
                src: u32::from(Ipv4Addr::new(42, 0, 0, 1)),
                dst: u32::from(Ipv4Addr::new(10, 0, 0, 2)),
                proto: PROTO_TCP,
                sport: 5000,
                dport: 80,
                size: 1500,
                fin: false,
            },
            Packet {
                ts_ns: 20,
                src: 1,
                dst: 2,
                proto: PROTO_UDP,
                sport: 53,
                dport: 53,
                size: 64,
                fin: true,
            },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &packets).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ts_ns,src_ip,dst_ip,proto,sport,dport,size,fin\n10,42.0.0.1,"));
        assert_eq!(read_trace(&buf[..]).unwrap(), packets);
    }

    #[test]
    fn out_of_order_rejected() {
        let text = "ts_ns,src_ip,dst_ip,proto,sport,dport,size,fin\n\
                    5,1.1.1.1,2.2.2.2,6,1,2,100,0\n\
                    4,1.1.1.1,2.2.2.2,6,1,2,100,0\n";
        assert!(matches!(
            read_trace(text.as_bytes()),
            Err(DataplaneError::Trace { line: 3, .. })
        ));
    }
}
