//! Discrete-time emulation of a NIC flow-offload engine.
//!
//! The host never touches the match table directly: it submits program
//! requests to a FIFO queue, and the emulated hardware applies them on its
//! own clock, one rule per token. Tokens refill at the configured learning
//! rate, degraded as the table fills. Entries leave the table only through
//! purge events (idle timeout, or eviction at shutdown), which carry the
//! final hardware counters back to the host as the one and only
//! synchronization channel for offloaded flows.

mod cuckoo;

pub use cuckoo::{CuckooTable, InsertOutcome};

use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FlowAction, FlowId, FlowKey, Packet};
use crate::time::SimTime;

/// Hard cap on the emulated table: past this the slot array alone costs
/// gigabytes, which is never what a desk-scale run wants.
pub const MAX_TABLE_CAPACITY: usize = 1 << 24;

/// Match-engine geometry and learning behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HwConfig {
    /// Total entries the table can hold.
    pub capacity: usize,
    /// Entries per cuckoo slot.
    pub buckets_per_slot: usize,
    /// Displacement budget per insert.
    pub max_kicks: usize,
    /// Sustained rule-installation rate (tokens per second).
    pub learn_rate_per_sec: f64,
    /// Token bucket depth: the largest burst of installs after idling.
    pub learn_burst: f64,
    /// Occupancy fraction where learning starts to degrade.
    pub degrade_threshold: f64,
    /// Multiplier remaining at 100% occupancy.
    pub degrade_floor: f64,
    /// Delay between a request's submission and its earliest installation.
    pub program_latency_us: u64,
    /// Hardware-side idle timeout driving purge events.
    pub hw_idle_timeout_ms: u64,
    /// How often the idle sweep runs (0 = every tick). Coarser values
    /// amortize the O(capacity) sweep on long runs.
    pub purge_scan_interval_us: u64,
    /// Seeds of the two slot hash functions.
    pub hash_seed_a: u64,
    pub hash_seed_b: u64,
    /// Receive streams feeding the adapter (affects preset learning rates
    /// only; the emulation itself is single-queue).
    pub streams: u32,
}

impl Default for HwConfig {
    fn default() -> Self {
        HwConfig::desk()
    }
}

impl HwConfig {
    /// Desk-scale defaults: small enough to reason about, large enough to
    /// show every mechanism.
    pub fn desk() -> HwConfig {
        HwConfig {
            capacity: 4096,
            buckets_per_slot: 4,
            max_kicks: 32,
            learn_rate_per_sec: 1000.0,
            learn_burst: 100.0,
            degrade_threshold: 0.9,
            degrade_floor: 0.1,
            program_latency_us: 10,
            hw_idle_timeout_ms: 30_000,
            purge_scan_interval_us: 0,
            hash_seed_a: 0x00c0_ffee_0a11_0c8a,
            hash_seed_b: 0x00de_ca10_0b10_c8e5,
            streams: 1,
        }
    }

    /// Published figures of the Napatech NT200A02 2x100G adapter: 140M flow
    /// entries, ~10 us per rule install, and a learning rate of 1M flows/s on
    /// a single stream or 3M flows/s spread over multiple streams (some
    /// vendor materials quote up to 3.5M; the preset uses the conservative
    /// figure). Meant to be scaled down before running: at full scale the
    /// table alone exceeds [`MAX_TABLE_CAPACITY`].
    pub fn nt200a02(streams: u32) -> HwConfig {
        HwConfig {
            capacity: 140_000_000,
            learn_rate_per_sec: if streams > 1 { 3_000_000.0 } else { 1_000_000.0 },
            learn_burst: 1000.0,
            streams,
            ..HwConfig::desk()
        }
    }

    pub fn program_latency(&self) -> Duration {
        Duration::from_micros(self.program_latency_us)
    }

    pub fn hw_idle_timeout(&self) -> Duration {
        Duration::from_millis(self.hw_idle_timeout_ms)
    }

    pub fn purge_scan_interval(&self) -> Duration {
        Duration::from_micros(self.purge_scan_interval_us)
    }

    /// Learning-rate multiplier at a given occupancy fraction: 1 up to the
    /// threshold, then linear down to the floor at a completely full table.
    pub fn degrade_multiplier(&self, occupancy: f64) -> f64 {
        let f = occupancy.clamp(0.0, 1.0);
        if f <= self.degrade_threshold {
            1.0
        } else {
            let ramp = (f - self.degrade_threshold) / (1.0 - self.degrade_threshold);
            1.0 + ramp * (self.degrade_floor - 1.0)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.capacity == 0 || self.buckets_per_slot == 0 {
            return Err("hw capacity and buckets_per_slot must be nonzero".into());
        }
        if self.capacity % self.buckets_per_slot != 0 {
            return Err(format!(
                "hw capacity {} must be a multiple of buckets_per_slot {}",
                self.capacity, self.buckets_per_slot
            ));
        }
        if self.capacity > MAX_TABLE_CAPACITY {
            return Err(format!(
                "hw capacity {} exceeds the emulator maximum {MAX_TABLE_CAPACITY}; \
                 lower it or apply a smaller scale_factor",
                self.capacity
            ));
        }
        if self.max_kicks == 0 {
            return Err("max_kicks must be at least 1".into());
        }
        if !(self.learn_rate_per_sec > 0.0) || !(self.learn_burst >= 1.0) {
            return Err("learn_rate_per_sec must be positive and learn_burst at least 1".into());
        }
        if !(0.0 < self.degrade_threshold && self.degrade_threshold < 1.0) {
            return Err("degrade_threshold must lie strictly between 0 and 1".into());
        }
        if !(0.0 <= self.degrade_floor && self.degrade_floor <= 1.0) {
            return Err("degrade_floor must lie in [0, 1]".into());
        }
        if self.hash_seed_a == self.hash_seed_b {
            return Err("hash seeds must differ".into());
        }
        if self.streams == 0 {
            return Err("streams must be at least 1".into());
        }
        Ok(())
    }
}

/// Entry payload of the hardware table (the key lives in the table cell).
#[derive(Debug, Clone)]
pub struct HwFlowEntry {
    pub flow_id: FlowId,
    pub action: FlowAction,
    pub packets: u64,
    pub bytes: u64,
    pub programmed_at: SimTime,
    pub last_seen: SimTime,
}

/// Host-to-hardware rule installation request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramRequest {
    pub key: FlowKey,
    pub flow_id: FlowId,
    pub action: FlowAction,
    pub submitted_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowEventKind {
    /// The rule is live; packets for the flow stop reaching the host.
    Programmed,
    /// No room in the table; the flow stays on the host for good.
    Rejected,
    /// The entry left the table; final counters ride along.
    Purged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PurgeReason {
    IdleTimeout,
    Evicted,
}

/// Hardware-to-host notification. Purge events are the only way an offloaded
/// flow's counters return to the host, and each entry emits exactly one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEvent {
    pub kind: FlowEventKind,
    pub flow_id: FlowId,
    pub hw_packets: u64,
    pub hw_bytes: u64,
    pub at: SimTime,
    pub reason: Option<PurgeReason>,
}

/// What the datapath did with one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HwDecision {
    /// Deliver to the host, tagged with the flow id the hardware knows
    /// (zero: first seen / not offloaded).
    ToHost(FlowId),
    /// Consumed in hardware and forwarded to `egress`.
    HandledPass { egress: u16 },
    /// Consumed in hardware and dropped by policy.
    HandledDrop,
}

/// Result of one hardware clock step.
#[derive(Debug, Default)]
pub struct HwTickReport {
    /// Rules installed during this tick (equals the Programmed events).
    pub programmed: usize,
    pub events: Vec<FlowEvent>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HwError {
    #[error("invalid hardware config: {0}")]
    InvalidConfig(String),
    #[error("program request carries reserved flow id 0")]
    ZeroFlowId,
    #[error("forward-to-host flows are never programmed into hardware")]
    UnoffloadableAction,
}

/// The emulated offload engine.
#[derive(Debug)]
pub struct HwFlowManager {
    cfg: HwConfig,
    table: CuckooTable<HwFlowEntry>,
    queue: VecDeque<ProgramRequest>,
    tokens: f64,
    last_refill: SimTime,
    last_scan: Option<SimTime>,
    duplicate_programs: u64,
    table_full_rejects: u64,
    programmed_total: u64,
    purged_total: u64,
}

impl HwFlowManager {
    pub fn new(cfg: HwConfig) -> Result<HwFlowManager, HwError> {
        cfg.validate().map_err(HwError::InvalidConfig)?;
        let table = CuckooTable::new(
            cfg.capacity,
            cfg.buckets_per_slot,
            cfg.max_kicks,
            cfg.hash_seed_a,
            cfg.hash_seed_b,
        );
        Ok(HwFlowManager {
            cfg,
            table,
            queue: VecDeque::new(),
            tokens: 0.0,
            last_refill: SimTime::ZERO,
            last_scan: None,
            duplicate_programs: 0,
            table_full_rejects: 0,
            programmed_total: 0,
            purged_total: 0,
        })
    }

    pub fn config(&self) -> &HwConfig {
        &self.cfg
    }

    pub fn occupancy(&self) -> usize {
        self.table.occupancy()
    }

    pub fn occupancy_fraction(&self) -> f64 {
        self.table.load_factor()
    }

    pub fn queue_depth(&self) -> usize {
        self.queue.len()
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    pub fn duplicate_programs(&self) -> u64 {
        self.duplicate_programs
    }

    pub fn table_full_rejects(&self) -> u64 {
        self.table_full_rejects
    }

    pub fn programmed_total(&self) -> u64 {
        self.programmed_total
    }

    pub fn purged_total(&self) -> u64 {
        self.purged_total
    }

    pub fn table_entry(&self, key: &FlowKey) -> Option<&HwFlowEntry> {
        self.table.get(key)
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (&FlowKey, &HwFlowEntry)> {
        self.table.iter()
    }

    /// Queues a rule installation. Never blocks; the request takes effect on
    /// a later [`tick`](Self::tick) once its latency has elapsed and a
    /// learning token is available.
    pub fn submit(&mut self, req: ProgramRequest) -> Result<(), HwError> {
        if req.flow_id.is_zero() {
            return Err(HwError::ZeroFlowId);
        }
        if req.action == FlowAction::ForwardToHost {
            return Err(HwError::UnoffloadableAction);
        }
        self.queue.push_back(req);
        Ok(())
    }

    /// Looks the packet up in the match table. A hit updates the hardware
    /// counters and resolves to the entry's action; a miss goes to the host
    /// tagged with flow id 0.
    pub fn process_packet(&mut self, pkt: &Packet) -> HwDecision {
        match self.table.get_mut(&pkt.key) {
            Some(e) => {
                e.packets += 1;
                e.bytes += u64::from(pkt.wire_len);
                e.last_seen = pkt.ts;
                match e.action {
                    FlowAction::PassTo(egress) => HwDecision::HandledPass { egress },
                    FlowAction::Drop => HwDecision::HandledDrop,
                    // Unreachable through submit(); kept total for safety.
                    FlowAction::ForwardToHost => HwDecision::ToHost(e.flow_id),
                }
            }
            None => HwDecision::ToHost(FlowId::ZERO),
        }
    }

    /// One hardware clock step: refill learning tokens (degraded by current
    /// occupancy), install due requests in FIFO order at one token each, then
    /// sweep for idle entries and emit their purge events.
    pub fn tick(&mut self, now: SimTime) -> HwTickReport {
        let elapsed = now.since(self.last_refill);
        self.last_refill = now;
        let degrade = self.cfg.degrade_multiplier(self.occupancy_fraction());
        self.tokens = (self.tokens + elapsed.as_secs_f64() * self.cfg.learn_rate_per_sec * degrade)
            .min(self.cfg.learn_burst);

        let mut report = HwTickReport::default();
        let latency = self.cfg.program_latency();
        while let Some(front) = self.queue.front() {
            if front.submitted_at + latency > now || self.tokens < 1.0 {
                break;
            }
            let req = self.queue.pop_front().expect("front just observed");
            if self.table.contains(&req.key) {
                // Second program attempt for a present key: the first rule
                // stays, the request is discarded without costing a token.
                self.duplicate_programs += 1;
                continue;
            }
            self.tokens -= 1.0;
            let entry = HwFlowEntry {
                flow_id: req.flow_id,
                action: req.action,
                packets: 0,
                bytes: 0,
                programmed_at: now,
                last_seen: now,
            };
            match self.table.insert(req.key, entry) {
                InsertOutcome::Inserted => {
                    self.programmed_total += 1;
                    report.programmed += 1;
                    report.events.push(FlowEvent {
                        kind: FlowEventKind::Programmed,
                        flow_id: req.flow_id,
                        hw_packets: 0,
                        hw_bytes: 0,
                        at: now,
                        reason: None,
                    });
                }
                InsertOutcome::Full => {
                    self.table_full_rejects += 1;
                    report.events.push(FlowEvent {
                        kind: FlowEventKind::Rejected,
                        flow_id: req.flow_id,
                        hw_packets: 0,
                        hw_bytes: 0,
                        at: now,
                        reason: None,
                    });
                }
            }
        }

        let due = match self.last_scan {
            None => true,
            Some(t) => now.since(t) >= self.cfg.purge_scan_interval(),
        };
        if due {
            self.last_scan = Some(now);
            let timeout = self.cfg.hw_idle_timeout();
            let idle = self.table.drain_where(|_, e| now.since(e.last_seen) > timeout);
            for (_, e) in idle {
                self.purged_total += 1;
                report.events.push(purge_event(&e, now, PurgeReason::IdleTimeout));
            }
        }
        report
    }

    /// Evicts every live entry, emitting their final counters. Used by the
    /// shutdown path so no hardware-held counters are lost.
    pub fn drain(&mut self, now: SimTime) -> Vec<FlowEvent> {
        let all = self.table.drain_where(|_, _| true);
        self.purged_total += all.len() as u64;
        all.iter()
            .map(|(_, e)| purge_event(e, now, PurgeReason::Evicted))
            .collect()
    }
}

fn purge_event(e: &HwFlowEntry, now: SimTime, reason: PurgeReason) -> FlowEvent {
    FlowEvent {
        kind: FlowEventKind::Purged,
        flow_id: e.flow_id,
        hw_packets: e.packets,
        hw_bytes: e.bytes,
        at: now,
        reason: Some(reason),
    }
}
