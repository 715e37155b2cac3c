//! Core flow identification and the software (host-side) flow table.
//!
//! Flows are unidirectional: each direction of a conversation gets its own
//! key, mirroring how the hardware match engine sees traffic. The table hands
//! out nonzero 64-bit flow ids on demand; id 0 is reserved on the wire to mean
//! "first seen / not classified yet", so an allocated id can never be 0.

use std::collections::HashMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpi::{DpiState, DpiVerdict};
use crate::time::SimTime;

/// Ground-truth application tag carried by generated packets. Real traffic
/// would expose this only through payload bytes; the toy dissectors match on
/// the tag instead, which keeps classification deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadClass {
    /// Random payload bytes: matches no dissector, the classifier worst case.
    Random,
    Http,
    Dns,
    Tls,
    Quic,
    Smtp,
    Ssh,
    Spotify,
    Netflix,
    Youtube,
}

impl std::fmt::Display for PayloadClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PayloadClass::Random => "random",
            PayloadClass::Http => "http",
            PayloadClass::Dns => "dns",
            PayloadClass::Tls => "tls",
            PayloadClass::Quic => "quic",
            PayloadClass::Smtp => "smtp",
            PayloadClass::Ssh => "ssh",
            PayloadClass::Spotify => "spotify",
            PayloadClass::Netflix => "netflix",
            PayloadClass::Youtube => "youtube",
        };
        f.write_str(s)
    }
}

/// Unidirectional 5-tuple plus optional VLAN tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub proto: u8,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub vlan: Option<u16>,
}

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

impl FlowKey {
    /// Builds a key from raw header fields. Ports are zeroed for protocols
    /// without them; VLAN tags are masked to their 12 valid bits. Total: any
    /// header maps to a key.
    pub fn new(
        proto: u8,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        src_port: u16,
        dst_port: u16,
        vlan: Option<u16>,
    ) -> FlowKey {
        let has_ports = proto == PROTO_TCP || proto == PROTO_UDP;
        FlowKey {
            proto,
            src,
            dst,
            src_port: if has_ports { src_port } else { 0 },
            dst_port: if has_ports { dst_port } else { 0 },
            vlan: vlan.map(|v| v & 0x0fff),
        }
    }

    /// Canonical byte form used by every hash over the key (cuckoo slots,
    /// RSS dispatch). The VLAN slot uses 0xffff for "untagged" so that
    /// `Some(0)` and `None` stay distinct.
    pub fn to_bytes(&self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[0] = self.proto;
        b[1..5].copy_from_slice(&self.src.octets());
        b[5..9].copy_from_slice(&self.dst.octets());
        b[9..11].copy_from_slice(&self.src_port.to_le_bytes());
        b[11..13].copy_from_slice(&self.dst_port.to_le_bytes());
        b[13..15].copy_from_slice(&self.vlan.unwrap_or(0xffff).to_le_bytes());
        b
    }
}

/// One simulated packet. `flow_seq` is the packet's index within its flow as
/// assigned by the generator; the probe itself never depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub ts: SimTime,
    pub key: FlowKey,
    pub wire_len: u32,
    pub ingress_port: u16,
    pub payload_class: PayloadClass,
    pub flow_seq: u64,
}

/// Hardware-visible flow handle. Zero is the reserved "unclassified" value
/// placed in packet metadata for flows the hardware does not know.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct FlowId(pub u64);

impl FlowId {
    pub const ZERO: FlowId = FlowId(0);

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for FlowId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Egress port id reserved for "count only, forward nowhere" actions, used
/// when passive mode strips the forwarding effect off a rule.
pub const ANALYTICS_PORT: u16 = u16::MAX;

/// What the datapath should do with a flow's packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowAction {
    /// Keep delivering packets to the host. Flows with this action are never
    /// programmed into hardware.
    ForwardToHost,
    /// Forward in hardware to the given egress port ([`ANALYTICS_PORT`] means
    /// count and discard).
    PassTo(u16),
    /// Drop in hardware.
    Drop,
}

/// Host-side view of where a flow stands in the offload protocol. Transitions
/// only move forward; a capacity-rejected flow keeps its `Requested` state and
/// is flagged separately (see [`HostFlowEntry::hw_rejected`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffloadState {
    NotEligible,
    Eligible,
    Requested,
    Programmed,
    HwPurged,
}

/// Software flow-table entry. Hardware counters stay zero until a purge event
/// (or the shutdown drain) merges the hardware view back in.
#[derive(Debug, Clone)]
pub struct HostFlowEntry {
    pub key: FlowKey,
    pub flow_id: FlowId,
    pub sw_packets: u64,
    pub sw_bytes: u64,
    pub hw_packets: u64,
    pub hw_bytes: u64,
    pub first_seen: SimTime,
    pub last_seen: SimTime,
    pub l7: DpiVerdict,
    pub dpi: Option<Box<DpiState>>,
    pub offload_state: OffloadState,
    pub action: FlowAction,
    pub ingress_port: u16,
    pub hw_rejected: bool,
}

impl HostFlowEntry {
    fn new(key: FlowKey, ts: SimTime, ingress_port: u16) -> HostFlowEntry {
        HostFlowEntry {
            key,
            flow_id: FlowId::ZERO,
            sw_packets: 0,
            sw_bytes: 0,
            hw_packets: 0,
            hw_bytes: 0,
            first_seen: ts,
            last_seen: ts,
            l7: DpiVerdict::Detecting,
            dpi: None,
            offload_state: OffloadState::NotEligible,
            action: FlowAction::ForwardToHost,
            ingress_port,
            hw_rejected: false,
        }
    }

    /// Accounts one host-delivered packet.
    pub fn touch(&mut self, pkt: &Packet) {
        self.sw_packets += 1;
        self.sw_bytes += u64::from(pkt.wire_len);
        self.last_seen = pkt.ts;
    }

    /// Moves the offload state machine forward. Going backward is a protocol
    /// bug, hence the assert.
    pub fn advance_offload(&mut self, next: OffloadState) {
        debug_assert!(
            next > self.offload_state,
            "offload state may only move forward ({:?} -> {next:?})",
            self.offload_state
        );
        self.offload_state = next;
    }

    /// True while the hardware (or an in-flight program request) owns the
    /// flow's lifecycle; such entries must not be expired by the host scan.
    pub fn is_hw_owned(&self) -> bool {
        !self.hw_rejected
            && matches!(
                self.offload_state,
                OffloadState::Requested | OffloadState::Programmed
            )
    }

    pub fn total_packets(&self) -> u64 {
        self.sw_packets + self.hw_packets
    }

    pub fn total_bytes(&self) -> u64 {
        self.sw_bytes + self.hw_bytes
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("flow table full ({0} entries)")]
    TableFull(usize),
    #[error("flow id space exhausted")]
    IdExhausted,
    #[error("flow id 0 is reserved and never resolves")]
    ZeroId,
    #[error("no live entry for flow id {0}")]
    NotFound(FlowId),
}

/// Result of an upsert: the entry plus whether this packet created it.
#[derive(Debug)]
pub struct Upsert<'a> {
    pub entry: &'a mut HostFlowEntry,
    pub created: bool,
}

/// Software flow table with id-based lookup for hardware events.
///
/// Iteration order is deterministic for a fixed operation sequence, which
/// keeps exports and metrics byte-identical across runs.
#[derive(Debug)]
pub struct FlowTable {
    entries: IndexMap<FlowKey, HostFlowEntry>,
    id_index: HashMap<FlowId, FlowKey>,
    idle_timeout: Duration,
    max_entries: usize,
    next_id: u64,
    id_stride: u64,
}

impl FlowTable {
    pub fn new(idle_timeout: Duration, max_entries: usize) -> FlowTable {
        FlowTable::with_id_stride(idle_timeout, max_entries, 0, 1)
    }

    /// A table allocating ids `offset+1, offset+1+stride, ...`. Per-worker
    /// tables use their worker index as offset and the worker count as
    /// stride, so ids stay globally unique and `(id-1) % stride` recovers the
    /// owning worker -- the same property the reference design gets for free
    /// by using entry addresses as ids.
    pub fn with_id_stride(
        idle_timeout: Duration,
        max_entries: usize,
        offset: u64,
        stride: u64,
    ) -> FlowTable {
        assert!(stride > 0 && offset < stride);
        FlowTable {
            entries: IndexMap::new(),
            id_index: HashMap::new(),
            idle_timeout,
            max_entries,
            next_id: offset + 1,
            id_stride: stride,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn idle_timeout(&self) -> Duration {
        self.idle_timeout
    }

    pub fn max_entries(&self) -> usize {
        self.max_entries
    }

    pub fn get(&self, key: &FlowKey) -> Option<&HostFlowEntry> {
        self.entries.get(key)
    }

    pub fn get_mut(&mut self, key: &FlowKey) -> Option<&mut HostFlowEntry> {
        self.entries.get_mut(key)
    }

    /// Returns the entry for `key`, creating it if absent. Creation fails
    /// with [`FlowError::TableFull`] at the configured entry limit.
    pub fn upsert(
        &mut self,
        key: FlowKey,
        ts: SimTime,
        ingress_port: u16,
    ) -> Result<Upsert<'_>, FlowError> {
        if !self.entries.contains_key(&key) && self.entries.len() >= self.max_entries {
            return Err(FlowError::TableFull(self.max_entries));
        }
        let mut created = false;
        let entry = self.entries.entry(key).or_insert_with(|| {
            created = true;
            HostFlowEntry::new(key, ts, ingress_port)
        });
        Ok(Upsert { entry, created })
    }

    /// Assigns the entry its flow id. Idempotent: an already-allocated entry
    /// just returns its id.
    pub fn allocate_flow_id(&mut self, key: &FlowKey) -> Result<FlowId, FlowError> {
        let next = self.next_id;
        let stride = self.id_stride;
        let entry = self
            .entries
            .get_mut(key)
            .ok_or(FlowError::NotFound(FlowId::ZERO))?;
        if !entry.flow_id.is_zero() {
            return Ok(entry.flow_id);
        }
        let id = FlowId(next);
        self.next_id = next.checked_add(stride).ok_or(FlowError::IdExhausted)?;
        entry.flow_id = id;
        self.id_index.insert(id, *key);
        Ok(id)
    }

    /// Looks up the live entry behind a hardware-reported id.
    pub fn resolve(&self, id: FlowId) -> Result<&HostFlowEntry, FlowError> {
        if id.is_zero() {
            return Err(FlowError::ZeroId);
        }
        let key = self.id_index.get(&id).ok_or(FlowError::NotFound(id))?;
        Ok(self
            .entries
            .get(key)
            .expect("id index points at a live entry"))
    }

    /// Mutable variant of [`resolve`](Self::resolve).
    pub fn resolve_mut(&mut self, id: FlowId) -> Result<&mut HostFlowEntry, FlowError> {
        if id.is_zero() {
            return Err(FlowError::ZeroId);
        }
        let key = self.id_index.get(&id).ok_or(FlowError::NotFound(id))?;
        Ok(self
            .entries
            .get_mut(key)
            .expect("id index points at a live entry"))
    }

    /// Removes and returns the entry behind a hardware-reported id.
    pub fn remove_by_id(&mut self, id: FlowId) -> Result<HostFlowEntry, FlowError> {
        if id.is_zero() {
            return Err(FlowError::ZeroId);
        }
        let key = self.id_index.remove(&id).ok_or(FlowError::NotFound(id))?;
        Ok(self
            .entries
            .swap_remove(&key)
            .expect("id index points at a live entry"))
    }

    /// Removes an entry by key, keeping the id index consistent.
    pub fn remove(&mut self, key: &FlowKey) -> Option<HostFlowEntry> {
        let entry = self.entries.swap_remove(key)?;
        if !entry.flow_id.is_zero() {
            self.id_index.remove(&entry.flow_id);
        }
        Some(entry)
    }

    /// Removes and returns every entry idle strictly longer than the
    /// configured timeout. Hardware-owned entries are skipped: their
    /// lifecycle ends with a hardware purge event instead.
    pub fn expire_scan(&mut self, now: SimTime) -> Vec<HostFlowEntry> {
        let timeout = self.idle_timeout;
        let expired: Vec<FlowKey> = self
            .entries
            .iter()
            .filter(|(_, e)| !e.is_hw_owned() && now.since(e.last_seen) > timeout)
            .map(|(k, _)| *k)
            .collect();
        expired
            .iter()
            .map(|k| self.remove(k).expect("key collected from live iteration"))
            .collect()
    }

    /// Removes and returns every entry (shutdown flush).
    pub fn drain_all(&mut self) -> Vec<HostFlowEntry> {
        self.id_index.clear();
        let mut out: Vec<HostFlowEntry> = Vec::with_capacity(self.entries.len());
        for (_, e) in self.entries.drain(..) {
            out.push(e);
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FlowKey, &HostFlowEntry)> {
        self.entries.iter()
    }

    #[cfg(test)]
    fn check_index_consistent(&self) {
        assert!(self.id_index.len() <= self.entries.len());
        for (id, key) in &self.id_index {
            let e = self.entries.get(key).expect("indexed key must be live");
            assert_eq!(e.flow_id, *id);
        }
        for (key, e) in &self.entries {
            if !e.flow_id.is_zero() {
                assert_eq!(self.id_index.get(&e.flow_id), Some(key));
            }
        }
    }
}
