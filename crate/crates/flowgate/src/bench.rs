//! Benchmark orchestration: the standard flow ladder, offload on/off
//! comparisons, and their CSV forms.
//!
//! Every cell shares one frozen host and hardware setup; only the flow
//! counts and the two feature toggles vary. Comparisons across cells are
//! then apples to apples, which matters more here than any absolute number.

use std::io::{self, Write};

use thiserror::Error;

use crate::hw::HwConfig;
use crate::probe::export::NullSink;
use crate::probe::metrics::Metrics;
use crate::probe::runner::{run_scenario, RunError};
use crate::scenario::ScenarioConfig;

/// Scale shared by the standard ladder: one thousandth of the full-rate
/// workload, small enough to run on a desk in seconds.
pub const SWEEP_SCALE: f64 = 0.001;

/// Simulated seconds per sweep cell.
pub const SWEEP_DURATION_S: f64 = 12.0;

/// Offered load per cell: 80 Gbps of 970-byte frames, scaled.
pub const SWEEP_RATE_BPS: f64 = 80e9 * SWEEP_SCALE;
pub const SWEEP_PACKET_SIZE: u32 = 970;

/// Host tick length for sweep cells.
pub const SWEEP_TICK_US: u64 = 10_000;

/// Host budget per tick for every sweep cell. Tuned once so the middle
/// ladder cell (1000 flows, 100 births/s, classification on, offload off)
/// drops about a quarter of its packets, then frozen; every other cell is
/// measured against this same host.
pub const SWEEP_HOST_BUDGET_UNITS: u64 = 145;

const SWEEP_SEED: u64 = 1;

/// A grid of workload points to run against one shared setup.
#[derive(Debug, Clone)]
pub struct SweepMatrix {
    /// (active_flows, new_flows_per_sec) per ladder step.
    pub rows: Vec<(f64, f64)>,
    pub base: ScenarioConfig,
}

impl SweepMatrix {
    /// The five-step ladder from 10K/1K to 20M/2M active/new flows per
    /// second, scaled by `scale`.
    pub fn standard(scale: f64) -> SweepMatrix {
        let full: [(f64, f64); 5] = [
            (10e3, 1e3),
            (100e3, 10e3),
            (1e6, 100e3),
            (10e6, 1e6),
            (20e6, 2e6),
        ];
        SweepMatrix {
            rows: full.iter().map(|&(a, b)| (a * scale, b * scale)).collect(),
            base: sweep_base(),
        }
    }

    /// Expands the grid into runnable cells: ladder steps outermost, then
    /// classification off/on, then offload off/on.
    pub fn cells(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::with_capacity(self.rows.len() * 4);
        for &(flows, births) in &self.rows {
            for dpi in [false, true] {
                for offload in [false, true] {
                    let mut cfg = self.base.clone();
                    cfg.name = format!("f{flows}_b{births}");
                    cfg.active_flows = flows;
                    cfg.new_flows_per_sec = births;
                    cfg.dpi_enabled = dpi;
                    cfg.offload_enabled = offload;
                    out.push(cfg);
                }
            }
        }
        out
    }
}

/// The shared per-cell setup behind [`SweepMatrix::standard`]: a
/// single-worker host with the frozen budget against a scaled-down
/// NT200A02-class adapter (multi-stream learning).
fn sweep_base() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.name = "sweep".into();
    cfg.packet_size = SWEEP_PACKET_SIZE;
    cfg.rate_bits_per_sec = SWEEP_RATE_BPS;
    cfg.duration_s = SWEEP_DURATION_S;
    cfg.seed = SWEEP_SEED;

    cfg.probe.workers = 1;
    cfg.probe.host_queue_depth = 4096;
    cfg.probe.host_budget_units_per_tick = SWEEP_HOST_BUDGET_UNITS;
    cfg.probe.cost_base = 1;
    cfg.probe.cost_dpi = 3;
    cfg.probe.cost_flow_create = 80;
    cfg.probe.tick_us = SWEEP_TICK_US;

    cfg.hw = HwConfig {
        capacity: 140_000,
        learn_rate_per_sec: 3000.0,
        learn_burst: 100.0,
        purge_scan_interval_us: 100_000,
        streams: 4,
        ..HwConfig::desk()
    };
    cfg
}

/// One finished cell, ready for a CSV row. Fractions are in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scenario: String,
    pub flows: f64,
    pub births: f64,
    pub dpi: bool,
    pub offload: bool,
    pub drop_pct: f64,
    pub cpu_load: f64,
    pub host_frac: f64,
    pub hw_frac: f64,
    pub occ_peak: u64,
    pub backlog_peak: u64,
}

impl SweepRow {
    fn from_metrics(cfg: &ScenarioConfig, m: &Metrics) -> SweepRow {
        SweepRow {
            scenario: cfg.name.clone(),
            flows: cfg.active_flows,
            births: cfg.new_flows_per_sec,
            dpi: cfg.dpi_enabled,
            offload: cfg.offload_enabled,
            drop_pct: m.drop_fraction(),
            cpu_load: m.avg_cpu_load(),
            host_frac: m.host_fraction(),
            hw_frac: m.hw_fraction(),
            occ_peak: m.occupancy_peak(),
            backlog_peak: m.backlog_peak(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("cell {cell}: {faults:?}")]
    Invariant { cell: String, faults: Vec<String> },
}

/// Runs every cell of the matrix in order. Any broken ledger aborts the
/// sweep: a benchmark that miscounts packets measures nothing.
pub fn run_sweep(matrix: &SweepMatrix) -> Result<Vec<SweepRow>, BenchError> {
    let mut rows = Vec::new();
    for cfg in matrix.cells() {
        let mut sink = NullSink::default();
        let m = run_scenario(&cfg, &mut sink)?;
        let faults = m.invariant_violations();
        if !faults.is_empty() {
            return Err(BenchError::Invariant {
                cell: format!("{} dpi={} offload={}", cfg.name, cfg.dpi_enabled, cfg.offload_enabled),
                faults,
            });
        }
        rows.push(SweepRow::from_metrics(&cfg, &m));
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str =
    "scenario,flows,births,dpi,offload,drop_pct,cpu_load,host_frac,hw_frac,occ_peak,backlog_peak";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{},{}",
            r.scenario,
            r.flows,
            r.births,
            onoff(r.dpi),
            onoff(r.offload),
            r.drop_pct,
            r.cpu_load,
            r.host_frac,
            r.hw_frac,
            r.occ_peak,
            r.backlog_peak,
        )?;
    }
    Ok(())
}

fn onoff(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// One run's headline numbers. Fractions are in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellReport {
    pub drop_pct: f64,
    pub cpu_load: f64,
    pub host_frac: f64,
    pub hw_frac: f64,
    pub occ_peak: u64,
    pub backlog_peak: u64,
}

impl CellReport {
    pub fn from_metrics(m: &Metrics) -> CellReport {
        CellReport {
            drop_pct: m.drop_fraction(),
            cpu_load: m.avg_cpu_load(),
            host_frac: m.host_fraction(),
            hw_frac: m.hw_fraction(),
            occ_peak: m.occupancy_peak(),
            backlog_peak: m.backlog_peak(),
        }
    }
}

/// The same scenario twice under one seed, offload off then on.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub scenario: String,
    pub off: CellReport,
    pub on: CellReport,
}

impl ComparisonReport {
    pub fn drop_delta(&self) -> f64 {
        self.on.drop_pct - self.off.drop_pct
    }

    pub fn cpu_delta(&self) -> f64 {
        self.on.cpu_load - self.off.cpu_load
    }
}

/// Runs `cfg` with offload forced off, then on, under the same seed.
pub fn compare_offload(cfg: &ScenarioConfig) -> Result<ComparisonReport, BenchError> {
    let run = |offload: bool| -> Result<CellReport, BenchError> {
        let mut cell = cfg.clone();
        cell.offload_enabled = offload;
        let mut sink = NullSink::default();
        let m = run_scenario(&cell, &mut sink)?;
        let faults = m.invariant_violations();
        if !faults.is_empty() {
            return Err(BenchError::Invariant {
                cell: format!("{} offload={offload}", cell.name),
                faults,
            });
        }
        Ok(CellReport::from_metrics(&m))
    };
    let off = run(false)?;
    let on = run(true)?;
    Ok(ComparisonReport {
        scenario: cfg.name.clone(),
        off,
        on,
    })
}

pub const COMPARE_CSV_HEADER: &str = "scenario,metric,offload_off,offload_on,delta";

/// Long-form CSV: one row per headline metric.
pub fn write_comparison_csv<W: Write>(report: &ComparisonReport, mut w: W) -> io::Result<()> {
    writeln!(w, "{COMPARE_CSV_HEADER}")?;
    let rows: [(&str, f64, f64); 6] = [
        ("drop_pct", report.off.drop_pct, report.on.drop_pct),
        ("cpu_load", report.off.cpu_load, report.on.cpu_load),
        ("host_frac", report.off.host_frac, report.on.host_frac),
        ("hw_frac", report.off.hw_frac, report.on.hw_frac),
        (
            "occ_peak",
            report.off.occ_peak as f64,
            report.on.occ_peak as f64,
        ),
        (
            "backlog_peak",
            report.off.backlog_peak as f64,
            report.on.backlog_peak as f64,
        ),
    ];
    for (name, off, on) in rows {
        writeln!(w, "{},{name},{off:.4},{on:.4},{:.4}", report.scenario, on - off)?;
    }
    Ok(())
}
