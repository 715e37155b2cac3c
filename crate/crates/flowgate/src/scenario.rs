//! Scenario files: one TOML document describing a complete run.
//!
//! A scenario ties the traffic model, the hardware emulation, and the host
//! pipeline together under a single seed. Unknown keys are rejected so a
//! typo cannot silently fall back to a default and skew a comparison.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpi::DpiConfig;
use crate::flow::PayloadClass;
use crate::hw::HwConfig;
use crate::probe::policy::{PolicyRule, ProbeMode};
use crate::probe::ProbeConfig;
use crate::traffic::TrafficConfig;

/// Shortest mean flow lifetime a scenario may imply. Births beyond
/// `active_flows / MIN_FLOW_LIFETIME_S` would churn flows faster than
/// anything downstream could classify them.
pub const MIN_FLOW_LIFETIME_S: f64 = 1.0;

/// Smallest frame a scenario may offer. Rate math lower in the stack
/// accepts smaller frames for headroom checks, but a runnable scenario
/// sticks to the Ethernet minimum.
pub const MIN_PACKET_SIZE: u32 = 64;

/// Everything one run needs. Field-for-field this is the TOML schema:
/// traffic knobs at the top level, then `[probe]`, `[hw]`, `[dpi]`
/// sections and `[[policy]]` rules. Any omitted section takes the
/// defaults below; note that omitting `[dpi]` keeps the built-in
/// recognizer set while an explicit `[dpi]` section replaces it whole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    /// Target concurrent flows.
    pub active_flows: f64,
    /// Flow birth rate; with `active_flows` this fixes the mean lifetime.
    pub new_flows_per_sec: f64,
    /// Frame size in bytes, wire overhead excluded.
    pub packet_size: u32,
    /// Offered load in bits per second.
    pub rate_bits_per_sec: f64,
    pub duration_s: f64,
    /// Application mix as fractions summing to 1. Empty means all-random
    /// payloads.
    pub l7_mix: BTreeMap<PayloadClass, f64>,
    pub seed: u64,
    /// Multiplier applied to flows, births, and rate by [`scaled`]
    /// (Self::scaled), letting a file carry full-scale figures while runs
    /// stay desk-sized. Hardware capacity is not touched; presets bake
    /// their own scaled tables.
    pub scale_factor: f64,
    pub mode: ProbeMode,
    pub offload_enabled: bool,
    pub dpi_enabled: bool,
    pub probe: ProbeConfig,
    pub hw: HwConfig,
    pub dpi: DpiConfig,
    pub policy: Vec<PolicyRule>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "desk".into(),
            active_flows: 1000.0,
            new_flows_per_sec: 100.0,
            packet_size: 970,
            rate_bits_per_sec: 1e9,
            duration_s: 10.0,
            l7_mix: BTreeMap::new(),
            seed: 1,
            scale_factor: 1.0,
            mode: ProbeMode::Passive,
            offload_enabled: true,
            dpi_enabled: true,
            probe: ProbeConfig::default(),
            hw: HwConfig::desk(),
            dpi: DpiConfig::toy_set(),
            policy: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
}

impl ScenarioConfig {
    /// The small all-defaults setup: 1K flows at 1 Gbps against a 4096-entry
    /// table.
    pub fn desk() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    /// An 80 Gbps, 1M-active-flow workload against the NT200A02 preset, both
    /// sides multiplied by `scale` so the run fits on a desk. At `scale` 1.0
    /// the hardware table exceeds what the emulator can hold and validation
    /// says so.
    pub fn nt200a02(scale: f64) -> ScenarioConfig {
        let mut hw = HwConfig::nt200a02(1);
        hw.capacity = scale_capacity(hw.capacity, scale, hw.buckets_per_slot);
        hw.learn_rate_per_sec = (hw.learn_rate_per_sec * scale).max(1.0);
        ScenarioConfig {
            name: "nt200a02".into(),
            active_flows: 1e6 * scale,
            new_flows_per_sec: 1e5 * scale,
            packet_size: 970,
            rate_bits_per_sec: 80e9 * scale,
            hw,
            ..ScenarioConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<ScenarioConfig, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.display().to_string(),
            source,
        })?;
        ScenarioConfig::from_toml_str(&text).map_err(|source| ScenarioError::Parse {
            path: path.display().to_string(),
            source: Box::new(source),
        })
    }

    /// Checks the scenario and every section it carries. Messages name the
    /// offending field.
    pub fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("name must not be empty".into());
        }
        if self.packet_size < MIN_PACKET_SIZE {
            return Err(format!(
                "packet_size {} is below the {MIN_PACKET_SIZE}-byte minimum",
                self.packet_size
            ));
        }
        if !(self.scale_factor > 0.0) {
            return Err("scale_factor must be positive".into());
        }
        if !self.l7_mix.is_empty() {
            let sum: f64 = self.l7_mix.values().sum();
            if self.l7_mix.values().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(format!(
                    "l7_mix fractions must be nonnegative and sum to 1, not {sum}"
                ));
            }
        }
        let max_births = self.active_flows / MIN_FLOW_LIFETIME_S;
        if self.new_flows_per_sec > max_births {
            return Err(format!(
                "new_flows_per_sec {} implies a mean flow lifetime under \
                 {MIN_FLOW_LIFETIME_S} s at active_flows {}; lower the birth rate",
                self.new_flows_per_sec, self.active_flows
            ));
        }
        crate::probe::policy::Policy::new(self.mode, self.policy.clone())
            .map_err(|e| e.to_string())?;
        self.traffic().validate()?;
        self.hw.validate()?;
        self.probe.validate()?;
        Ok(())
    }

    /// The traffic-model view of this scenario.
    pub fn traffic(&self) -> TrafficConfig {
        TrafficConfig {
            rate_bps: self.rate_bits_per_sec,
            packet_size: self.packet_size,
            flow_births_per_sec: self.new_flows_per_sec,
            active_flows: self.active_flows,
            duration_s: self.duration_s,
            payload_mix: self.l7_mix.clone(),
        }
    }

    /// Applies `scale_factor` to flows, births, and offered rate, then
    /// resets the factor so applying twice changes nothing.
    pub fn scaled(&self) -> ScenarioConfig {
        let s = self.scale_factor;
        ScenarioConfig {
            active_flows: self.active_flows * s,
            new_flows_per_sec: self.new_flows_per_sec * s,
            rate_bits_per_sec: self.rate_bits_per_sec * s,
            scale_factor: 1.0,
            ..self.clone()
        }
    }
}

/// Scales a table capacity, keeping it a nonzero multiple of the bucket
/// width.
fn scale_capacity(capacity: usize, scale: f64, width: usize) -> usize {
    let scaled = (capacity as f64 * scale).round() as usize;
    let buckets = scaled.div_ceil(width).max(1);
    buckets * width
}
