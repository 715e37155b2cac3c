//! Run-level ledgers and per-tick series.
//!
//! Every packet the generator hands the probe must land in exactly one
//! bucket; [`Metrics::invariant_violations`] enforces that ledger and the
//! flow-table synchronization protocol after the run drains.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

/// Identity of a run, echoed into `metrics.json` so artifacts are
/// self-describing. Deliberately excludes wall-clock information: two runs
/// of the same scenario and seed must produce identical bytes.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunInfo {
    pub scenario: String,
    pub seed: u64,
    pub mode: String,
    pub offload: bool,
    pub dpi: bool,
    pub ticks: u64,
    pub sim_duration_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub run: RunInfo,

    // Packet ledger: the five right-hand buckets partition `generated`.
    pub generated: u64,
    pub host_processed: u64,
    pub hw_handled: u64,
    pub dropped_queue_full: u64,
    pub dropped_table_full: u64,
    pub packets_queued_at_shutdown: u64,

    // Flow ledger.
    pub flows_created: u64,
    pub flows_exported: u64,
    pub exported_packets: u64,
    pub exported_bytes: u64,

    // Offload protocol.
    pub offload_requested: u64,
    pub offload_programmed: u64,
    pub offload_rejected: u64,
    pub duplicate_programs: u64,
    pub requests_pending_at_shutdown: u64,
    pub hw_purge_events: u64,
    pub hw_merged_packets: u64,
    pub hw_merged_bytes: u64,
    pub orphan_events: u64,

    // Host-side processing.
    pub host_bytes: u64,
    pub host_policy_drops: u64,
    pub dpi_detected: u64,
    pub dpi_unknown: u64,
    pub dpi_scratch_peak_bytes: u64,
    pub egress_packets: BTreeMap<u16, u64>,

    // Per-tick series.
    pub cpu_load: Vec<f64>,
    pub hw_occupancy: Vec<u64>,
    pub prog_queue_depth: Vec<u64>,
    pub hw_programmed: Vec<u64>,
    pub drops_cum: Vec<u64>,

    /// Faults from the hardware/software table audit. Empty on a healthy
    /// run and omitted from the JSON.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sync_faults: Vec<String>,
}

impl Metrics {
    pub fn total_drops(&self) -> u64 {
        self.dropped_queue_full + self.dropped_table_full
    }

    /// Dropped fraction of all generated packets, in [0, 1].
    pub fn drop_fraction(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.total_drops() as f64 / self.generated as f64
        }
    }

    /// Share of delivered packets the host CPU had to touch.
    pub fn host_fraction(&self) -> f64 {
        let delivered = self.host_processed + self.hw_handled;
        if delivered == 0 {
            0.0
        } else {
            self.host_processed as f64 / delivered as f64
        }
    }

    pub fn hw_fraction(&self) -> f64 {
        let delivered = self.host_processed + self.hw_handled;
        if delivered == 0 {
            0.0
        } else {
            self.hw_handled as f64 / delivered as f64
        }
    }

    pub fn avg_cpu_load(&self) -> f64 {
        if self.cpu_load.is_empty() {
            0.0
        } else {
            self.cpu_load.iter().sum::<f64>() / self.cpu_load.len() as f64
        }
    }

    pub fn occupancy_peak(&self) -> u64 {
        self.hw_occupancy.iter().copied().max().unwrap_or(0)
    }

    pub fn backlog_peak(&self) -> u64 {
        self.prog_queue_depth.iter().copied().max().unwrap_or(0)
    }

    /// Checks the ledgers of a fully drained run. Every entry in the result
    /// is a broken bookkeeping identity, i.e. a bug.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let accounted = self.host_processed
            + self.hw_handled
            + self.dropped_queue_full
            + self.dropped_table_full
            + self.packets_queued_at_shutdown;
        if self.generated != accounted {
            v.push(format!(
                "packet ledger: generated {} != accounted {} \
                 (host {} + hw {} + queue_drop {} + table_drop {} + residual {})",
                self.generated,
                accounted,
                self.host_processed,
                self.hw_handled,
                self.dropped_queue_full,
                self.dropped_table_full,
                self.packets_queued_at_shutdown,
            ));
        }
        if self.flows_exported != self.flows_created {
            v.push(format!(
                "flow ledger: created {} flows but exported {}",
                self.flows_created, self.flows_exported
            ));
        }
        if self.hw_merged_packets != self.hw_handled {
            v.push(format!(
                "hardware counters: handled {} packets but merged {} back",
                self.hw_handled, self.hw_merged_packets
            ));
        }
        if self.exported_packets != self.host_processed + self.hw_merged_packets {
            v.push(format!(
                "export ledger: exported {} packets, expected host {} + merged {}",
                self.exported_packets, self.host_processed, self.hw_merged_packets
            ));
        }
        if self.exported_bytes != self.host_bytes + self.hw_merged_bytes {
            v.push(format!(
                "export ledger: exported {} bytes, expected host {} + merged {}",
                self.exported_bytes, self.host_bytes, self.hw_merged_bytes
            ));
        }
        let settled = self.offload_programmed
            + self.offload_rejected
            + self.duplicate_programs
            + self.requests_pending_at_shutdown;
        if self.offload_requested != settled {
            v.push(format!(
                "offload ledger: requested {} != settled {} \
                 (programmed {} + rejected {} + duplicate {} + pending {})",
                self.offload_requested,
                settled,
                self.offload_programmed,
                self.offload_rejected,
                self.duplicate_programs,
                self.requests_pending_at_shutdown,
            ));
        }
        if self.hw_purge_events != self.offload_programmed {
            v.push(format!(
                "purge protocol: {} programmed entries but {} purge events",
                self.offload_programmed, self.hw_purge_events
            ));
        }
        if self.orphan_events != 0 {
            v.push(format!(
                "{} hardware events arrived for unknown flow ids",
                self.orphan_events
            ));
        }
        let ticks = self.cpu_load.len();
        if [
            self.hw_occupancy.len(),
            self.prog_queue_depth.len(),
            self.hw_programmed.len(),
            self.drops_cum.len(),
        ]
        .iter()
        .any(|&l| l != ticks)
        {
            v.push("per-tick series lengths disagree".into());
        }
        v.extend(self.sync_faults.iter().cloned());
        v
    }

    /// Pretty-printed JSON. Output depends only on the metric values, never
    /// on wall-clock state, so identical runs serialize identically.
    pub fn write_json<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")
    }

    /// Per-tick series as CSV.
    pub fn write_ticks_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "tick_index,cpu_load,hw_occupancy,prog_queue_depth,drops_cum")?;
        for i in 0..self.cpu_load.len() {
            writeln!(
                w,
                "{},{:.6},{},{},{}",
                i, self.cpu_load[i], self.hw_occupancy[i], self.prog_queue_depth[i], self.drops_cum[i]
            )?;
        }
        Ok(())
    }
}
