//! Flow record export: one JSON object per line, one line per finished flow.

use std::io::{self, BufRead, BufWriter, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::flow::HostFlowEntry;

/// Why a flow's record was emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    /// Idled out of the software table.
    HostTimeout,
    /// The hardware purged the entry and its final counters arrived.
    HwPurge,
    /// Flushed while still live when the run ended.
    Shutdown,
}

/// One exported flow. Field order is the wire order; `packets` and `bytes`
/// are the software and hardware counters combined. For flows that finished
/// in hardware, `last_seen_ns` is the host's last direct observation: the
/// purge event carries counters, not timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRecord {
    pub proto: u8,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub sport: u16,
    pub dport: u16,
    pub l7: String,
    pub packets: u64,
    pub bytes: u64,
    pub first_seen_ns: u64,
    pub last_seen_ns: u64,
    pub end_reason: EndReason,
}

impl ExportRecord {
    pub fn from_entry(entry: &HostFlowEntry, end_reason: EndReason) -> ExportRecord {
        ExportRecord {
            proto: entry.key.proto,
            src: entry.key.src,
            dst: entry.key.dst,
            sport: entry.key.src_port,
            dport: entry.key.dst_port,
            l7: entry.l7.export_label().to_owned(),
            packets: entry.total_packets(),
            bytes: entry.total_bytes(),
            first_seen_ns: entry.first_seen.as_nanos(),
            last_seen_ns: entry.last_seen.as_nanos(),
            end_reason,
        }
    }
}

/// Where finished flows go. Batching, files, and in-memory capture all hide
/// behind this.
pub trait RecordSink {
    fn export(&mut self, record: ExportRecord) -> io::Result<()>;
}

/// In-memory capture, mostly for tests and the comparison tooling.
impl RecordSink for Vec<ExportRecord> {
    fn export(&mut self, record: ExportRecord) -> io::Result<()> {
        self.push(record);
        Ok(())
    }
}

/// Discards records while still exercising the serialization path's
/// counters.
#[derive(Debug, Default)]
pub struct NullSink {
    pub records: u64,
}

impl RecordSink for NullSink {
    fn export(&mut self, _record: ExportRecord) -> io::Result<()> {
        self.records += 1;
        Ok(())
    }
}

/// Totals accumulated by an [`Exporter`], used to cross-check the flow
/// ledger at the end of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExportSummary {
    pub records: u64,
    pub packets: u64,
    pub bytes: u64,
}

/// JSONL writer that flushes once per record batch.
#[derive(Debug)]
pub struct Exporter<W: Write> {
    out: BufWriter<W>,
    batch: usize,
    pending: usize,
    summary: ExportSummary,
}

impl<W: Write> Exporter<W> {
    pub fn new(sink: W) -> Exporter<W> {
        Exporter::with_batch(sink, 256)
    }

    /// `batch` records are buffered between flushes; 1 flushes every record.
    pub fn with_batch(sink: W, batch: usize) -> Exporter<W> {
        Exporter {
            out: BufWriter::new(sink),
            batch: batch.max(1),
            pending: 0,
            summary: ExportSummary::default(),
        }
    }

    pub fn summary(&self) -> ExportSummary {
        self.summary
    }

    /// Flushes buffered records and returns the totals.
    pub fn finish(mut self) -> io::Result<ExportSummary> {
        self.out.flush()?;
        Ok(self.summary)
    }
}

impl<W: Write> RecordSink for Exporter<W> {
    fn export(&mut self, record: ExportRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &record)?;
        self.out.write_all(b"\n")?;
        self.summary.records += 1;
        self.summary.packets += record.packets;
        self.summary.bytes += record.bytes;
        self.pending += 1;
        if self.pending >= self.batch {
            self.out.flush()?;
            self.pending = 0;
        }
        Ok(())
    }
}

/// Reads a JSONL export back, line by line.
pub fn read_records<R: BufRead>(reader: R) -> io::Result<Vec<ExportRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
