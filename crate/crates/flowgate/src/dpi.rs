//! Payload classification with a budgeted packet prefix.
//!
//! Dissectors implement [`Dissector`] and are registered by name; the engine
//! feeds each flow's first packets to every still-viable candidate until one
//! confirms, all reject, or the packet budget runs out. Per-flow inspection
//! state carries an opaque scratch buffer that is freed the moment a verdict
//! is reached, so classification memory is bounded by the number of flows
//! still undecided, not by the table size.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Packet, PayloadClass};

/// Classification outcome for a flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DpiVerdict {
    /// Still inspecting the packet prefix.
    Detecting,
    /// Confirmed as the named protocol.
    Detected(Arc<str>),
    /// Gave up: nothing matched within the packet budget.
    Unknown,
}

impl DpiVerdict {
    pub fn is_detecting(&self) -> bool {
        matches!(self, DpiVerdict::Detecting)
    }

    /// Label used in flow exports. Flows cut short before a verdict are
    /// reported as unknown, like any exporter flushing an unclassified flow.
    pub fn export_label(&self) -> &str {
        match self {
            DpiVerdict::Detected(name) => name,
            DpiVerdict::Detecting | DpiVerdict::Unknown => "unknown",
        }
    }
}

/// One protocol recognizer. `matches` judges a single packet; the engine owns
/// the per-flow counting against the confirm/reject thresholds.
pub trait Dissector: Send + Sync {
    fn name(&self) -> &str;
    /// Matching packets needed to confirm the protocol.
    fn packets_to_confirm(&self) -> u32;
    /// Non-matching packets after which this dissector gives up on the flow.
    fn packets_to_reject(&self) -> u32;
    fn matches(&self, pkt: &Packet) -> bool;
}

/// Declarative dissector: matches packets whose ground-truth class equals
/// `match_class`. This is what scenario files register.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissectorSpec {
    pub name: String,
    pub match_class: PayloadClass,
    pub packets_to_confirm: u32,
    pub packets_to_reject: u32,
}

impl Dissector for DissectorSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn packets_to_confirm(&self) -> u32 {
        self.packets_to_confirm
    }

    fn packets_to_reject(&self) -> u32 {
        self.packets_to_reject
    }

    fn matches(&self, pkt: &Packet) -> bool {
        pkt.payload_class == self.match_class
    }
}

/// Engine-level settings plus the dissector set, as read from a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpiConfig {
    /// Packet budget per flow; past this the flow is Unknown.
    pub max_packets: u32,
    /// Per-flow scratch buffer held while a flow is undecided.
    pub scratch_bytes: usize,
    pub dissectors: Vec<DissectorSpec>,
}

impl Default for DpiConfig {
    fn default() -> Self {
        DpiConfig {
            max_packets: 8,
            scratch_bytes: 1024,
            dissectors: Vec::new(),
        }
    }
}

impl DpiConfig {
    /// A small recognizer set for common toy protocols. Reject thresholds sit
    /// at the packet budget, so random payloads cost the full prefix --
    /// the worst case for the host CPU.
    pub fn toy_set() -> DpiConfig {
        let spec = |name: &str, class, confirm| DissectorSpec {
            name: name.to_string(),
            match_class: class,
            packets_to_confirm: confirm,
            packets_to_reject: 8,
        };
        DpiConfig {
            max_packets: 8,
            scratch_bytes: 1024,
            dissectors: vec![
                spec("toy-http", PayloadClass::Http, 2),
                spec("toy-dns", PayloadClass::Dns, 1),
                spec("toy-tls", PayloadClass::Tls, 2),
                spec("toy-quic", PayloadClass::Quic, 2),
                spec("toy-spotify", PayloadClass::Spotify, 3),
                spec("toy-netflix", PayloadClass::Netflix, 3),
                spec("toy-youtube", PayloadClass::Youtube, 3),
            ],
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DpiError {
    #[error("dissector {0:?} already registered")]
    DuplicateName(String),
    #[error("dissector {name:?} invalid: {reason}")]
    InvalidDissector { name: String, reason: String },
    #[error("flow already has a verdict; nothing further may be fed")]
    FeedAfterVerdict,
}

#[derive(Debug, Clone)]
struct Candidate {
    dissector: u32,
    hits: u32,
    misses: u32,
    rejected: bool,
}

/// Per-flow inspection state. Dropped (or kept with an empty scratch) once the
/// flow reaches a verdict.
#[derive(Debug, Clone)]
pub struct DpiState {
    inspected: u32,
    candidates: Vec<Candidate>,
    verdict: DpiVerdict,
    scratch: Vec<u8>,
}

impl DpiState {
    pub fn inspected(&self) -> u32 {
        self.inspected
    }

    pub fn verdict(&self) -> &DpiVerdict {
        &self.verdict
    }

    /// Names of dissectors still in the running.
    pub fn viable_candidates<'e>(&self, engine: &'e DpiEngine) -> Vec<&'e str> {
        self.candidates
            .iter()
            .filter(|c| !c.rejected)
            .map(|c| engine.dissectors[c.dissector as usize].name())
            .collect()
    }

    pub fn scratch_bytes(&self) -> usize {
        self.scratch.len()
    }

    fn release_scratch(&mut self) {
        self.scratch = Vec::new();
        self.candidates = Vec::new();
    }
}

/// Dissector registry plus the feed loop.
pub struct DpiEngine {
    dissectors: Vec<Arc<dyn Dissector>>,
    labels: Vec<Arc<str>>,
    by_name: HashMap<String, usize>,
    max_packets: u32,
    scratch_bytes: usize,
}

impl std::fmt::Debug for DpiEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DpiEngine")
            .field("dissectors", &self.labels)
            .field("max_packets", &self.max_packets)
            .field("scratch_bytes", &self.scratch_bytes)
            .finish()
    }
}

impl DpiEngine {
    pub fn new(max_packets: u32, scratch_bytes: usize) -> DpiEngine {
        assert!(max_packets > 0, "packet budget must be at least 1");
        DpiEngine {
            dissectors: Vec::new(),
            labels: Vec::new(),
            by_name: HashMap::new(),
            max_packets,
            scratch_bytes,
        }
    }

    pub fn from_config(cfg: &DpiConfig) -> Result<DpiEngine, DpiError> {
        let mut engine = DpiEngine::new(cfg.max_packets, cfg.scratch_bytes);
        for spec in &cfg.dissectors {
            engine.register(Arc::new(spec.clone()))?;
        }
        Ok(engine)
    }

    /// Adds a dissector to the registry. Names are unique; thresholds must be
    /// sane and confirmation must be reachable within the packet budget.
    pub fn register(&mut self, d: Arc<dyn Dissector>) -> Result<(), DpiError> {
        let name = d.name().to_string();
        if self.by_name.contains_key(&name) {
            return Err(DpiError::DuplicateName(name));
        }
        if d.packets_to_confirm() == 0 || d.packets_to_reject() == 0 {
            return Err(DpiError::InvalidDissector {
                name,
                reason: "confirm/reject thresholds must be at least 1".into(),
            });
        }
        if d.packets_to_confirm() > self.max_packets {
            return Err(DpiError::InvalidDissector {
                name,
                reason: format!(
                    "packets_to_confirm {} exceeds the {}-packet budget",
                    d.packets_to_confirm(),
                    self.max_packets
                ),
            });
        }
        self.by_name.insert(name.clone(), self.dissectors.len());
        self.labels.push(name.into());
        self.dissectors.push(d);
        Ok(())
    }

    pub fn dissector_count(&self) -> usize {
        self.dissectors.len()
    }

    pub fn max_packets(&self) -> u32 {
        self.max_packets
    }

    pub fn scratch_bytes(&self) -> usize {
        self.scratch_bytes
    }

    /// Fresh per-flow state with every registered dissector as a candidate.
    pub fn new_state(&self) -> DpiState {
        DpiState {
            inspected: 0,
            candidates: (0..self.dissectors.len() as u32)
                .map(|dissector| Candidate {
                    dissector,
                    hits: 0,
                    misses: 0,
                    rejected: false,
                })
                .collect(),
            verdict: DpiVerdict::Detecting,
            scratch: vec![0u8; self.scratch_bytes],
        }
    }

    /// Inspects one packet. Returns the flow's verdict after this packet; on
    /// the transition out of Detecting the scratch buffer is released.
    ///
    /// Ties (several dissectors confirming on the same packet) go to the
    /// earliest-registered one.
    pub fn feed(&self, state: &mut DpiState, pkt: &Packet) -> Result<DpiVerdict, DpiError> {
        if !state.verdict.is_detecting() {
            return Err(DpiError::FeedAfterVerdict);
        }
        state.inspected += 1;

        let mut confirmed: Option<usize> = None;
        let mut viable = 0usize;
        for cand in state.candidates.iter_mut() {
            if cand.rejected {
                continue;
            }
            let d = &self.dissectors[cand.dissector as usize];
            if d.matches(pkt) {
                cand.hits += 1;
                if cand.hits >= d.packets_to_confirm() && confirmed.is_none() {
                    confirmed = Some(cand.dissector as usize);
                }
            } else {
                cand.misses += 1;
                if cand.misses >= d.packets_to_reject() {
                    cand.rejected = true;
                }
            }
            if !cand.rejected {
                viable += 1;
            }
        }

        let verdict = if let Some(idx) = confirmed {
            DpiVerdict::Detected(Arc::clone(&self.labels[idx]))
        } else if state.inspected >= self.max_packets {
            DpiVerdict::Unknown
        } else if viable == 0 && !self.dissectors.is_empty() {
            // All candidates gave up. With an empty registry there is nothing
            // to give up, so the flow rides out the whole packet budget.
            DpiVerdict::Unknown
        } else {
            DpiVerdict::Detecting
        };

        if !verdict.is_detecting() {
            state.verdict = verdict.clone();
            state.release_scratch();
        }
        debug_assert!(state.inspected <= self.max_packets);
        Ok(verdict)
    }
}
