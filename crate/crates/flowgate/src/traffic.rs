//! Synthetic traffic: a flow schedule derived from aggregate targets, and a
//! time-ordered packet stream over it.
//!
//! The knobs are the ones that matter to a probe under load: offered rate,
//! packet size, flow birth rate, and concurrent flow count. Flow count and
//! per-flow packet counts follow from those via Little's law, so a scenario
//! states its workload the way capacity figures are quoted, not as a packet
//! list. All timing math is integer nanoseconds: the same config and seed
//! produce the same packets, byte for byte.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap};
use std::io::{self, BufRead, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::flow::{FlowKey, Packet, PayloadClass, PROTO_TCP, PROTO_UDP};
use crate::time::SimTime;
use crate::util::DetRng;

/// Per-packet overhead on the wire: preamble, start delimiter, frame check
/// sequence, and the minimum inter-frame gap.
pub const WIRE_OVERHEAD_BYTES: u32 = 24;

/// Packet-rate ceiling: minimum-size frames at 100 Gbit/s. Anything above
/// this describes a link that cannot exist here.
pub const MAX_PPS: f64 = 148_800_000.0;

/// Packets per second a given offered bit rate works out to.
pub fn packets_per_second(rate_bps: f64, packet_size: u32) -> f64 {
    rate_bps / (f64::from(packet_size + WIRE_OVERHEAD_BYTES) * 8.0)
}

/// Aggregate workload description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    /// Offered load in bits per second, overhead included.
    pub rate_bps: f64,
    /// Frame size in bytes (excluding wire overhead).
    pub packet_size: u32,
    /// New flows per second.
    pub flow_births_per_sec: f64,
    /// Target concurrent flows; with the birth rate this fixes the mean flow
    /// lifetime.
    pub active_flows: f64,
    pub duration_s: f64,
    /// Application mix by weight. Empty means all-random payloads.
    pub payload_mix: BTreeMap<PayloadClass, f64>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            rate_bps: 1e9,
            packet_size: 970,
            flow_births_per_sec: 100.0,
            active_flows: 1000.0,
            duration_s: 10.0,
            payload_mix: BTreeMap::new(),
        }
    }
}

impl TrafficConfig {
    pub fn packets_per_second(&self) -> f64 {
        packets_per_second(self.rate_bps, self.packet_size)
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_nanos((self.duration_s * 1e9).round() as u64)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rate_bps > 0.0) {
            return Err("rate_bps must be positive".into());
        }
        if self.packet_size == 0 {
            return Err("packet_size must be at least 1 byte".into());
        }
        let pps = self.packets_per_second();
        if pps > MAX_PPS {
            return Err(format!(
                "rate {} bps at {}B frames is {pps:.0} pps, beyond the {MAX_PPS:.0} pps \
                 line-rate ceiling",
                self.rate_bps, self.packet_size
            ));
        }
        if !(self.flow_births_per_sec > 0.0) || !(self.active_flows > 0.0) {
            return Err("flow_births_per_sec and active_flows must be positive".into());
        }
        if !(self.duration_s > 0.0) {
            return Err("duration_s must be positive".into());
        }
        if self.payload_mix.values().any(|&w| w < 0.0)
            || (!self.payload_mix.is_empty() && self.payload_mix.values().sum::<f64>() <= 0.0)
        {
            return Err("payload_mix weights must be nonnegative with a positive sum".into());
        }
        Ok(())
    }
}

/// One flow's emission plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowSpec {
    pub key: FlowKey,
    pub class: PayloadClass,
    pub start: SimTime,
    /// Inter-packet gap within the flow.
    pub gap_ns: u64,
    /// Packets the flow would send if the run never ended.
    pub packets: u64,
    pub wire_len: u32,
}

impl FlowSpec {
    /// Packets actually emitted before `end`.
    pub fn packets_before(&self, end: SimTime) -> u64 {
        let start = self.start.as_nanos();
        let end = end.as_nanos();
        if start >= end {
            return 0;
        }
        let fit = (end - start - 1) / self.gap_ns + 1;
        fit.min(self.packets)
    }
}

/// The full emission plan for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSchedule {
    pub flows: Vec<FlowSpec>,
    pub duration: SimTime,
}

impl FlowSchedule {
    /// Expands a workload description into concrete flows.
    ///
    /// Flow count is `births x duration`, spread evenly over the run; each
    /// flow sends its share of the aggregate packet rate at a fixed gap over
    /// the mean lifetime `active / births`. Flows born late truncate at the
    /// end of the run, exactly as a real capture window would cut them.
    pub fn build(cfg: &TrafficConfig, seed: u64) -> Result<FlowSchedule, String> {
        cfg.validate()?;
        let duration = cfg.duration();
        let n_flows = ((cfg.flow_births_per_sec * cfg.duration_s).floor() as u64).max(1);
        if n_flows > (1 << 24) {
            return Err(format!(
                "{n_flows} flows exceed the generator's 2^24 address pool; \
                 scale the scenario down"
            ));
        }
        let spacing_ns = duration.as_nanos() / n_flows;
        if spacing_ns == 0 {
            return Err("flow birth rate too high for the duration".into());
        }
        let pps = cfg.packets_per_second();
        let per_flow = ((pps * cfg.duration_s / n_flows as f64).round() as u64).max(1);
        let lifetime_s = cfg.active_flows / cfg.flow_births_per_sec;
        let gap_ns = ((lifetime_s / per_flow as f64) * 1e9).round().max(1.0) as u64;

        let mix: Vec<(PayloadClass, f64)> = if cfg.payload_mix.is_empty() {
            vec![(PayloadClass::Random, 1.0)]
        } else {
            let total: f64 = cfg.payload_mix.values().sum();
            cfg.payload_mix
                .iter()
                .map(|(&c, &w)| (c, w / total))
                .collect()
        };

        let mut rng = DetRng::new(seed).fork(0x7261_6666_6963);
        let mut flows = Vec::with_capacity(n_flows as usize);
        for i in 0..n_flows {
            let class = pick_class(&mix, rng.next_f64());
            flows.push(FlowSpec {
                key: flow_key(i, class, &mut rng),
                class,
                start: SimTime::from_nanos(i * spacing_ns),
                gap_ns,
                packets: per_flow,
                wire_len: cfg.packet_size,
            });
        }
        Ok(FlowSchedule { flows, duration })
    }

    /// Total packets the stream will emit.
    pub fn total_packets(&self) -> u64 {
        self.flows.iter().map(|f| f.packets_before(self.duration)).sum()
    }

    pub fn stream(&self) -> PacketStream<'_> {
        PacketStream::new(self)
    }
}

fn pick_class(mix: &[(PayloadClass, f64)], draw: f64) -> PayloadClass {
    let mut acc = 0.0;
    for &(class, w) in mix {
        acc += w;
        if draw < acc {
            return class;
        }
    }
    mix.last().expect("mix is never empty").0
}

/// Transport and server endpoint a payload class rides on.
fn class_endpoint(class: PayloadClass) -> (u8, u16) {
    match class {
        PayloadClass::Http => (PROTO_TCP, 80),
        PayloadClass::Dns => (PROTO_UDP, 53),
        PayloadClass::Tls => (PROTO_TCP, 443),
        PayloadClass::Quic => (PROTO_UDP, 443),
        PayloadClass::Smtp => (PROTO_TCP, 25),
        PayloadClass::Ssh => (PROTO_TCP, 22),
        PayloadClass::Spotify => (PROTO_TCP, 4070),
        PayloadClass::Netflix => (PROTO_TCP, 443),
        PayloadClass::Youtube => (PROTO_UDP, 443),
        PayloadClass::Random => (PROTO_TCP, 0),
    }
}

/// Builds flow `i`'s key. The client address encodes the flow index, so keys
/// are unique by construction and the packet ledger can be checked exactly.
fn flow_key(i: u64, class: PayloadClass, rng: &mut DetRng) -> FlowKey {
    let (mut proto, mut dport) = class_endpoint(class);
    if class == PayloadClass::Random {
        proto = if rng.next_bool() { PROTO_TCP } else { PROTO_UDP };
        dport = 1024 + rng.next_range(60_000) as u16;
    }
    let src = Ipv4Addr::from(0x0a00_0000 | (i as u32 & 0x00ff_ffff));
    // Benchmark address range, one server per application class.
    let dst = Ipv4Addr::new(198, 18, 0, class as u8 + 1);
    let sport = 1024 + rng.next_range(60_000) as u16;
    FlowKey::new(proto, src, dst, sport, dport, None)
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    ts_ns: u64,
    flow: u32,
    seq: u64,
}

/// Time-ordered merge of every flow's packets, truncated at the schedule's
/// duration. Ties break on flow index, so the order is total and stable.
#[derive(Debug)]
pub struct PacketStream<'a> {
    schedule: &'a FlowSchedule,
    heap: BinaryHeap<Reverse<Pending>>,
    end_ns: u64,
}

impl<'a> PacketStream<'a> {
    fn new(schedule: &'a FlowSchedule) -> PacketStream<'a> {
        let end_ns = schedule.duration.as_nanos();
        let mut heap = BinaryHeap::with_capacity(schedule.flows.len());
        for (i, f) in schedule.flows.iter().enumerate() {
            if f.packets > 0 && f.start.as_nanos() < end_ns {
                heap.push(Reverse(Pending {
                    ts_ns: f.start.as_nanos(),
                    flow: i as u32,
                    seq: 0,
                }));
            }
        }
        PacketStream {
            schedule,
            heap,
            end_ns,
        }
    }
}

impl Iterator for PacketStream<'_> {
    type Item = Packet;

    fn next(&mut self) -> Option<Packet> {
        let Reverse(p) = self.heap.pop()?;
        let spec = &self.schedule.flows[p.flow as usize];
        if p.seq + 1 < spec.packets {
            let next_ts = p.ts_ns + spec.gap_ns;
            if next_ts < self.end_ns {
                self.heap.push(Reverse(Pending {
                    ts_ns: next_ts,
                    flow: p.flow,
                    seq: p.seq + 1,
                }));
            }
        }
        Some(Packet {
            ts: SimTime::from_nanos(p.ts_ns),
            key: spec.key,
            wire_len: spec.wire_len,
            ingress_port: 0,
            payload_class: spec.class,
            flow_seq: p.seq,
        })
    }
}

/// One trace line; the on-disk form of a packet.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceLine {
    ts_ns: u64,
    proto: u8,
    src: Ipv4Addr,
    dst: Ipv4Addr,
    sport: u16,
    dport: u16,
    len: u32,
    l7: PayloadClass,
    seq: u64,
}

/// Writes packets as JSONL and returns how many were written.
pub fn write_trace<W: Write>(
    mut w: W,
    packets: impl Iterator<Item = Packet>,
) -> io::Result<u64> {
    let mut count = 0;
    for pkt in packets {
        let line = TraceLine {
            ts_ns: pkt.ts.as_nanos(),
            proto: pkt.key.proto,
            src: pkt.key.src,
            dst: pkt.key.dst,
            sport: pkt.key.src_port,
            dport: pkt.key.dst_port,
            len: pkt.wire_len,
            l7: pkt.payload_class,
            seq: pkt.flow_seq,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
        count += 1;
    }
    Ok(count)
}

/// Streaming reader for traces written by [`write_trace`].
pub struct TraceReader<R: BufRead> {
    lines: io::Lines<R>,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R) -> TraceReader<R> {
        TraceReader {
            lines: reader.lines(),
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = io::Result<Packet>;

    fn next(&mut self) -> Option<io::Result<Packet>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e)),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = match serde_json::from_str(&line) {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            return Some(Ok(Packet {
                ts: SimTime::from_nanos(parsed.ts_ns),
                key: FlowKey::new(
                    parsed.proto,
                    parsed.src,
                    parsed.dst,
                    parsed.sport,
                    parsed.dport,
                    None,
                ),
                wire_len: parsed.len,
                ingress_port: 0,
                payload_class: parsed.l7,
                flow_seq: parsed.seq,
            }));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn packet_rate_follows_from_frame_size() {
        // 80 Mbit/s of 970B frames: 80e6 / ((970+24)*8) = 10060.36... pps.
        let pps = packets_per_second(80e6, 970);
        assert!((pps - 10_060.3621).abs() < 0.01);
        // Minimum-size frames at line rate hit the known ceiling.
        let pps = packets_per_second(100e9, 60);
        assert!((pps - 148_809_523.8).abs() < 1.0);
    }

    #[test]
    fn impossible_rates_are_rejected() {
        let cfg = TrafficConfig {
            rate_bps: 100e9,
            packet_size: 40,
            ..TrafficConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.contains("ceiling"));

        let ok = TrafficConfig {
            rate_bps: 100e9,
            packet_size: 1500,
            ..TrafficConfig::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn schedule_derivation_matches_the_hand_computation() {
        // births 100/s for 10 s -> 1000 flows; lifetime 1000/100 = 10 s;
        // 1 Gbit/s of 970B frames -> 125_754.5 pps -> 1258 packets per flow;
        // gap = 10 s / 1258 = 7_949_125.6 ns, rounded up.
        let cfg = TrafficConfig::default();
        let s = FlowSchedule::build(&cfg, 7).unwrap();
        assert_eq!(s.flows.len(), 1000);
        assert_eq!(s.flows[0].packets, 1258);
        assert_eq!(s.flows[0].gap_ns, 7_949_126);
        assert_eq!(s.flows[1].start, SimTime::from_millis(10));
        assert_eq!(s.duration, SimTime::from_secs(10));
    }

    #[test]
    fn flow_keys_are_unique() {
        let cfg = TrafficConfig {
            flow_births_per_sec: 500.0,
            ..TrafficConfig::default()
        };
        let s = FlowSchedule::build(&cfg, 11).unwrap();
        let keys: HashSet<_> = s.flows.iter().map(|f| f.key).collect();
        assert_eq!(keys.len(), s.flows.len());
    }

    #[test]
    fn stream_is_time_ordered_and_complete() {
        let cfg = TrafficConfig {
            rate_bps: 8e6,
            flow_births_per_sec: 20.0,
            active_flows: 50.0,
            duration_s: 5.0,
            ..TrafficConfig::default()
        };
        let s = FlowSchedule::build(&cfg, 3).unwrap();
        let mut last = SimTime::ZERO;
        let mut count = 0u64;
        for pkt in s.stream() {
            assert!(pkt.ts >= last, "stream must be time ordered");
            assert!(pkt.ts < s.duration);
            last = pkt.ts;
            count += 1;
        }
        assert_eq!(count, s.total_packets());
        assert!(count > 0);
    }

    #[test]
    fn late_flows_truncate_at_the_window_end() {
        let spec = FlowSpec {
            key: flow_key(0, PayloadClass::Random, &mut DetRng::new(1)),
            class: PayloadClass::Random,
            start: SimTime::from_secs(9),
            gap_ns: 500_000_000,
            packets: 100,
            wire_len: 100,
        };
        // Packets at 9.0, 9.5 s; 10.0 is out.
        assert_eq!(spec.packets_before(SimTime::from_secs(10)), 2);
        assert_eq!(spec.packets_before(SimTime::from_secs(9)), 0);
        let sched = FlowSchedule {
            flows: vec![spec],
            duration: SimTime::from_secs(10),
        };
        assert_eq!(sched.stream().count(), 2);
    }

    #[test]
    fn payload_mix_weights_shape_the_flow_population() {
        let mut mix = BTreeMap::new();
        mix.insert(PayloadClass::Http, 1.0);
        mix.insert(PayloadClass::Dns, 1.0);
        let cfg = TrafficConfig {
            flow_births_per_sec: 1000.0,
            payload_mix: mix,
            ..TrafficConfig::default()
        };
        let s = FlowSchedule::build(&cfg, 5).unwrap();
        let http = s.flows.iter().filter(|f| f.class == PayloadClass::Http).count();
        let dns = s.flows.iter().filter(|f| f.class == PayloadClass::Dns).count();
        assert_eq!(http + dns, 10_000);
        assert!(http > 4500 && dns > 4500, "an even mix stays near even");
        // Classes map to their conventional endpoints.
        let f = s.flows.iter().find(|f| f.class == PayloadClass::Dns).unwrap();
        assert_eq!(f.key.proto, PROTO_UDP);
        assert_eq!(f.key.dst_port, 53);
    }

    #[test]
    fn same_seed_same_packets_different_seed_different_flows() {
        let cfg = TrafficConfig::default();
        let a = FlowSchedule::build(&cfg, 42).unwrap();
        let b = FlowSchedule::build(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let first_a: Vec<Packet> = a.stream().take(200).collect();
        let first_b: Vec<Packet> = b.stream().take(200).collect();
        assert_eq!(first_a, first_b);

        let c = FlowSchedule::build(&cfg, 43).unwrap();
        assert_ne!(a.flows[0].key, c.flows[0].key);
    }

    #[test]
    fn trace_round_trips_exactly() {
        let cfg = TrafficConfig {
            flow_births_per_sec: 10.0,
            duration_s: 2.0,
            rate_bps: 1e6,
            ..TrafficConfig::default()
        };
        let s = FlowSchedule::build(&cfg, 9).unwrap();
        let original: Vec<Packet> = s.stream().collect();
        let mut buf = Vec::new();
        let written = write_trace(&mut buf, original.iter().copied()).unwrap();
        assert_eq!(written, original.len() as u64);
        let back: Vec<Packet> = TraceReader::new(&buf[..])
            .collect::<io::Result<Vec<_>>>()
            .unwrap();
        assert_eq!(back, original);
    }
}
