//! The simulation loop: one scenario in, one [`Metrics`] ledger out.
//!
//! Time advances in fixed host ticks. Each tick feeds the due packets to the
//! hardware first (its match table short-circuits offloaded flows), lets the
//! workers spend their CPU budget on whatever reached the host, forwards
//! fresh program requests to the hardware, applies the hardware's events
//! back onto the software tables, and samples the per-tick series. At the
//! end the hardware is drained, every surviving flow is exported, and the
//! ledgers must balance.

use std::collections::BTreeMap;
use std::io;

use thiserror::Error;

use crate::dpi::DpiEngine;
use crate::flow::Packet;
use crate::hw::{HwDecision, HwFlowManager};
use crate::probe::export::RecordSink;
use crate::probe::metrics::{Metrics, RunInfo};
use crate::probe::policy::Policy;
use crate::probe::Probe;
use crate::scenario::ScenarioConfig;
use crate::time::SimTime;
use crate::traffic::FlowSchedule;

/// Ticks between mid-run audits of the hardware/software table sync. The
/// audit always runs once more right before the final drain.
const SYNC_AUDIT_INTERVAL: u64 = 1024;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Builds the packet schedule for `cfg` and runs it end to end. Flow
/// records go to `sink`; everything countable comes back in the metrics.
pub fn run_scenario(cfg: &ScenarioConfig, sink: &mut dyn RecordSink) -> Result<Metrics, RunError> {
    let schedule = FlowSchedule::build(&cfg.traffic(), cfg.seed).map_err(RunError::Config)?;
    run_with_packets(cfg, schedule.duration, schedule.stream(), sink)
}

/// Runs an explicit packet stream (pre-built schedule or replayed trace)
/// under `cfg`'s probe, hardware, and policy setup. `duration` sets how
/// many ticks the loop simulates; packets at or past it are not consumed.
pub fn run_with_packets(
    cfg: &ScenarioConfig,
    duration: SimTime,
    packets: impl IntoIterator<Item = Packet>,
    sink: &mut dyn RecordSink,
) -> Result<Metrics, RunError> {
    cfg.validate().map_err(RunError::Config)?;
    let policy = Policy::new(cfg.mode, cfg.policy.clone()).map_err(|e| RunError::Config(e.to_string()))?;
    let dpi = if cfg.dpi_enabled {
        Some(DpiEngine::from_config(&cfg.dpi).map_err(|e| RunError::Config(e.to_string()))?)
    } else {
        None
    };
    let mut probe = Probe::new(cfg.probe.clone(), policy, dpi, cfg.offload_enabled)
        .map_err(|e| RunError::Config(e.to_string()))?;
    let mut hw = HwFlowManager::new(cfg.hw.clone()).map_err(|e| RunError::Config(e.to_string()))?;

    let tick_ns = cfg.probe.tick_us * 1000;
    let ticks = duration.as_nanos().div_ceil(tick_ns).max(1);
    let budget = cfg.probe.host_budget_units_per_tick;
    let scan_interval = cfg.probe.host_scan_interval();

    let mut m = Metrics {
        run: RunInfo {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            mode: cfg.mode.to_string(),
            offload: cfg.offload_enabled,
            dpi: cfg.dpi_enabled,
            ticks,
            sim_duration_ns: ticks * tick_ns,
        },
        ..Metrics::default()
    };

    let mut source = packets.into_iter().peekable();
    let mut next_scan = SimTime::ZERO + scan_interval;
    let mut hw_egress: BTreeMap<u16, u64> = BTreeMap::new();

    for tick in 0..ticks {
        let tick_end = SimTime::from_nanos((tick + 1) * tick_ns);

        while source
            .peek()
            .is_some_and(|p| p.ts < tick_end && p.ts < duration)
        {
            let pkt = source.next().expect("peeked");
            m.generated += 1;
            match hw.process_packet(&pkt) {
                HwDecision::HandledPass { egress } => {
                    m.hw_handled += 1;
                    *hw_egress.entry(egress).or_insert(0) += 1;
                }
                HwDecision::HandledDrop => m.hw_handled += 1,
                HwDecision::ToHost(_) => probe.ingest(pkt),
            }
        }

        let used = probe.step_workers(budget);
        for req in probe.take_program_requests() {
            if let Err(e) = hw.submit(req) {
                m.sync_faults.push(format!("rejected program request: {e}"));
            }
        }
        let report = hw.tick(tick_end);
        probe.apply_flow_events(report.events, sink)?;

        if tick_end >= next_scan {
            probe.expire_idle(tick_end, sink)?;
            next_scan += scan_interval;
        }

        m.cpu_load.push(used as f64 / budget as f64);
        m.hw_occupancy.push(hw.occupancy() as u64);
        m.prog_queue_depth.push(hw.queue_depth() as u64);
        m.hw_programmed.push(report.programmed as u64);
        m.drops_cum
            .push(probe.stats.dropped_queue_full + probe.stats.dropped_table_full);

        if (tick + 1) % SYNC_AUDIT_INTERVAL == 0 {
            m.sync_faults.extend(probe.verify_hw_sync(hw.iter_entries()));
        }
    }

    let end = SimTime::from_nanos(ticks * tick_ns);
    m.sync_faults.extend(probe.verify_hw_sync(hw.iter_entries()));
    m.requests_pending_at_shutdown = hw.queue_depth() as u64;

    let evicted = hw.drain(end);
    probe.apply_flow_events(evicted, sink)?;
    probe.flush_all(sink)?;
    m.packets_queued_at_shutdown = probe.queued_packets();

    probe.stats.fold_into(&mut m);
    m.duplicate_programs = hw.duplicate_programs();
    for (port, n) in hw_egress {
        *m.egress_packets.entry(port).or_insert(0) += n;
    }
    Ok(m)
}
