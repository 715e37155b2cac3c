//! A software network-flow probe with a discrete-time emulation of a
//! SmartNIC flow-offload engine.
//!
//! The probe keeps per-flow state, classifies the first packets of every
//! flow, and applies a policy action once classification settles. When
//! offload is enabled, settled flows are pushed down into an emulated
//! hardware flow table (cuckoo-hashed, token-bucket learning, purge-on-idle)
//! so their remaining packets bypass the host CPU entirely; the hardware
//! returns each flow's final counters in a purge event, the only channel
//! through which the two tables stay consistent.
//!
//! Everything is deterministic: a scenario file plus a seed fully fixes the
//! packet schedule, every queue decision, and the output metrics, byte for
//! byte. The accounting is closed, meaning every generated packet lands in
//! exactly one ledger bucket and every flow in exactly one export record,
//! and runs verify those identities after draining.
//!
//! Entry points: [`scenario::ScenarioConfig`] describes a run,
//! [`probe::runner::run_scenario`] executes it, [`bench`] sweeps whole
//! workload ladders and offload comparisons.

pub mod bench;
pub mod dpi;
pub mod flow;
pub mod hw;
pub mod probe;
pub mod scenario;
pub mod time;
pub mod traffic;
pub mod util;

pub use probe::metrics::Metrics;
pub use probe::runner::{run_scenario, run_with_packets};
pub use scenario::ScenarioConfig;
