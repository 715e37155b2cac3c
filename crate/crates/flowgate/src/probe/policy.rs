//! First-match action policy, applied once per flow when its classification
//! settles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpi::DpiVerdict;
use crate::flow::{FlowAction, FlowKey, ANALYTICS_PORT};

/// Egress port of the appended catch-all rule in inline mode. Ingress is
/// port 0 by convention, so the default is "out the other side of the wire".
pub const DEFAULT_EGRESS_PORT: u16 = 1;

/// How the probe sits in the network. Inline probes enforce rule actions on
/// the traffic; passive probes only observe, so every forwarding or dropping
/// rule is coerced into a count-only pass toward [`ANALYTICS_PORT`].
///
/// The two inline variants differ only in what traffic they are given: with
/// the built-in generator all flows are unidirectional, so `InlineBi` is
/// meaningful only for replayed traces that carry both directions of a
/// conversation. The pipeline treats them identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    Passive,
    InlineUni,
    InlineBi,
}

impl ProbeMode {
    pub fn is_inline(self) -> bool {
        !matches!(self, ProbeMode::Passive)
    }

    /// The name used in scenario files and run metadata.
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeMode::Passive => "passive",
            ProbeMode::InlineUni => "inline_uni",
            ProbeMode::InlineBi => "inline_bi",
        }
    }
}

impl std::fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One policy rule. Every matcher that is present must hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule {
    pub name: String,
    /// Higher fires first; equal priorities fire in listed order.
    #[serde(default)]
    pub priority: i32,
    /// Application label to match. `"unknown"` matches flows whose
    /// classification ended without a detection (or never ran).
    #[serde(default)]
    pub l7: Option<String>,
    #[serde(default)]
    pub proto: Option<u8>,
    /// Matches either endpoint port.
    #[serde(default)]
    pub port: Option<u16>,
    pub action: FlowAction,
}

impl PolicyRule {
    fn matches(&self, key: &FlowKey, l7: &DpiVerdict) -> bool {
        if let Some(want) = &self.l7 {
            if want != l7.export_label() {
                return false;
            }
        }
        if let Some(proto) = self.proto {
            if key.proto != proto {
                return false;
            }
        }
        if let Some(port) = self.port {
            if key.src_port != port && key.dst_port != port {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy rule has an empty name")]
    EmptyRuleName,
    #[error("duplicate policy rule name {0:?}")]
    DuplicateRuleName(String),
}

/// Rule list plus the mode-dependent default, evaluated first-match.
#[derive(Debug, Clone)]
pub struct Policy {
    mode: ProbeMode,
    /// Sorted by priority (descending), stable within equal priorities.
    rules: Vec<PolicyRule>,
}

impl Policy {
    pub fn new(mode: ProbeMode, mut rules: Vec<PolicyRule>) -> Result<Policy, PolicyError> {
        let mut seen = std::collections::HashSet::new();
        for rule in &rules {
            if rule.name.is_empty() {
                return Err(PolicyError::EmptyRuleName);
            }
            if !seen.insert(rule.name.clone()) {
                return Err(PolicyError::DuplicateRuleName(rule.name.clone()));
            }
        }
        rules.sort_by(|a, b| b.priority.cmp(&a.priority));
        Ok(Policy { mode, rules })
    }

    /// The default policy: pass everything (toward the analytics port when
    /// passive).
    pub fn pass_all(mode: ProbeMode) -> Policy {
        Policy::new(mode, Vec::new()).expect("no rules, nothing to validate")
    }

    pub fn mode(&self) -> ProbeMode {
        self.mode
    }

    /// Resolves the action for a classified flow. Falls through to the
    /// catch-all pass when no rule matches.
    pub fn evaluate(&self, key: &FlowKey, l7: &DpiVerdict) -> FlowAction {
        let action = self
            .rules
            .iter()
            .find(|r| r.matches(key, l7))
            .map(|r| r.action)
            .unwrap_or(if self.mode.is_inline() {
                FlowAction::PassTo(DEFAULT_EGRESS_PORT)
            } else {
                FlowAction::PassTo(ANALYTICS_PORT)
            });
        match (self.mode, action) {
            // A passive probe cannot forward or drop; it only counts.
            (ProbeMode::Passive, FlowAction::PassTo(_)) | (ProbeMode::Passive, FlowAction::Drop) => {
                FlowAction::PassTo(ANALYTICS_PORT)
            }
            (_, action) => action,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{PROTO_TCP, PROTO_UDP};
    use std::net::Ipv4Addr;
    use std::sync::Arc;

    fn key(proto: u8, sport: u16, dport: u16) -> FlowKey {
        FlowKey::new(
            proto,
            Ipv4Addr::new(10, 0, 0, 1),
            Ipv4Addr::new(10, 0, 0, 2),
            sport,
            dport,
            None,
        )
    }

    fn rule(name: &str, priority: i32, action: FlowAction) -> PolicyRule {
        PolicyRule {
            name: name.into(),
            priority,
            l7: None,
            proto: None,
            port: None,
            action,
        }
    }

    fn detected(label: &str) -> DpiVerdict {
        DpiVerdict::Detected(Arc::from(label))
    }

    #[test]
    fn first_match_by_priority_then_listed_order() {
        let policy = Policy::new(
            ProbeMode::InlineUni,
            vec![
                rule("low", 0, FlowAction::PassTo(9)),
                rule("tie-a", 5, FlowAction::Drop),
                rule("tie-b", 5, FlowAction::PassTo(7)),
            ],
        )
        .unwrap();
        let action = policy.evaluate(&key(PROTO_TCP, 1000, 80), &detected("http"));
        assert_eq!(action, FlowAction::Drop, "higher priority wins, first listed on tie");
    }

    #[test]
    fn all_present_matchers_must_hold() {
        let mut r = rule("dns-drop", 0, FlowAction::Drop);
        r.l7 = Some("dns".into());
        r.proto = Some(PROTO_UDP);
        r.port = Some(53);
        let policy = Policy::new(ProbeMode::InlineUni, vec![r]).unwrap();

        assert_eq!(
            policy.evaluate(&key(PROTO_UDP, 4000, 53), &detected("dns")),
            FlowAction::Drop
        );
        // Port matches on the source side too.
        assert_eq!(
            policy.evaluate(&key(PROTO_UDP, 53, 4000), &detected("dns")),
            FlowAction::Drop
        );
        // Wrong proto: falls through to the default pass.
        assert_eq!(
            policy.evaluate(&key(PROTO_TCP, 4000, 53), &detected("dns")),
            FlowAction::PassTo(DEFAULT_EGRESS_PORT)
        );
        // Wrong label.
        assert_eq!(
            policy.evaluate(&key(PROTO_UDP, 4000, 53), &detected("http")),
            FlowAction::PassTo(DEFAULT_EGRESS_PORT)
        );
    }

    #[test]
    fn unknown_label_matches_undetected_flows() {
        let mut r = rule("quarantine-unknown", 0, FlowAction::ForwardToHost);
        r.l7 = Some("unknown".into());
        let policy = Policy::new(ProbeMode::InlineUni, vec![r]).unwrap();
        assert_eq!(
            policy.evaluate(&key(PROTO_TCP, 1, 2), &DpiVerdict::Unknown),
            FlowAction::ForwardToHost
        );
        assert_eq!(
            policy.evaluate(&key(PROTO_TCP, 1, 2), &DpiVerdict::Detecting),
            FlowAction::ForwardToHost
        );
        assert_eq!(
            policy.evaluate(&key(PROTO_TCP, 1, 2), &detected("tls")),
            FlowAction::PassTo(DEFAULT_EGRESS_PORT)
        );
    }

    #[test]
    fn passive_mode_coerces_every_action_to_analytics() {
        let policy = Policy::new(
            ProbeMode::Passive,
            vec![
                rule("drop-it", 2, FlowAction::Drop),
                rule("route-it", 1, FlowAction::PassTo(3)),
            ],
        )
        .unwrap();
        assert_eq!(
            policy.evaluate(&key(PROTO_TCP, 1, 2), &detected("http")),
            FlowAction::PassTo(ANALYTICS_PORT)
        );
        // ForwardToHost survives coercion: it means "do not offload".
        let keep = Policy::new(
            ProbeMode::Passive,
            vec![rule("keep", 0, FlowAction::ForwardToHost)],
        )
        .unwrap();
        assert_eq!(
            keep.evaluate(&key(PROTO_TCP, 1, 2), &detected("http")),
            FlowAction::ForwardToHost
        );
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let err = Policy::new(
            ProbeMode::InlineUni,
            vec![rule("a", 0, FlowAction::Drop), rule("a", 1, FlowAction::Drop)],
        )
        .unwrap_err();
        assert_eq!(err, PolicyError::DuplicateRuleName("a".into()));
    }

    #[test]
    fn rules_round_trip_through_toml() {
        let text = r#"
            name = "netflix-offload"
            priority = 10
            l7 = "netflix"
            action = { pass_to = 2 }
        "#;
        let rule: PolicyRule = toml::from_str(text).unwrap();
        assert_eq!(rule.action, FlowAction::PassTo(2));
        assert_eq!(rule.l7.as_deref(), Some("netflix"));
        let back = toml::to_string(&rule).unwrap();
        let again: PolicyRule = toml::from_str(&back).unwrap();
        assert_eq!(again, rule);
    }
}
