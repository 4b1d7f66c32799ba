use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::types::{Channel, DataPoint, PatientId};

/// Severity attached to an alarm. Ordered: `Advisory < HighSeverity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    #[serde(rename = "advisory")]
    Advisory,
    #[serde(rename = "high")]
    HighSeverity,
}

impl Severity {
    pub fn wire_name(self) -> &'static str {
        match self {
            Severity::Advisory => "advisory",
            Severity::HighSeverity => "high",
        }
    }
}

/// Two-class patient categorization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeverityClass {
    #[default]
    LowSeverity,
    HighSeverity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlarmState {
    Raised,
    Acknowledged,
    Cleared,
}

impl AlarmState {
    pub fn wire_name(self) -> &'static str {
        match self {
            AlarmState::Raised => "raised",
            AlarmState::Acknowledged => "acknowledged",
            AlarmState::Cleared => "cleared",
        }
    }

    pub fn is_active(self) -> bool {
        !matches!(self, AlarmState::Cleared)
    }
}

impl fmt::Display for AlarmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal alarm transition {from} -> {to}")]
pub struct StateError {
    pub from: AlarmState,
    pub to: AlarmState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOutcome {
    /// The rule's condition held.
    Violated,
    /// A supporting check passed (coverage, duration).
    Passed,
    /// The rule held but a suppressing integrity flag covered its evidence.
    Suppressed,
    /// Names the flag responsible for a suppression.
    SuppressedBy,
    /// A transient episode returned to normal in time.
    Transient,
    /// A transient episode outlived its return window.
    Escalated,
    /// A suppressed condition lost its covering flag and was re-raised.
    Unmasked,
    /// Informational; does not affect the decision.
    Note,
}

/// One row of an alarm's decision trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTraceEntry {
    pub rule_id: String,
    pub evaluated_value: f64,
    pub threshold: f64,
    pub outcome: TraceOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl RuleTraceEntry {
    pub fn new(rule_id: impl Into<String>, value: f64, threshold: f64, outcome: TraceOutcome) -> Self {
        Self {
            rule_id: rule_id.into(),
            evaluated_value: value,
            threshold,
            outcome,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub alarm_id: String,
    pub patient_id: PatientId,
    pub rule_id: String,
    pub severity: Severity,
    pub trigger_time_ms: i64,
    /// Data-points of the decision window, oldest first.
    pub evidence: Arc<[DataPoint]>,
    /// Channels whose values the decision rests on.
    pub channels: Vec<Channel>,
    pub rule_trace: Vec<RuleTraceEntry>,
    pub state: AlarmState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acknowledged_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleared_ms: Option<i64>,
}

impl AlarmEvent {
    pub fn evidence_from(&self) -> i64 {
        self.evidence.first().map_or(self.trigger_time_ms, |d| d.timestamp_ms)
    }

    pub fn evidence_to(&self) -> i64 {
        self.evidence.last().map_or(self.trigger_time_ms, |d| d.timestamp_ms)
    }

    /// Applies a state change, refusing anything outside
    /// Raised→Acknowledged→Cleared and Raised→Cleared.
    pub fn transition(&mut self, to: AlarmState) -> Result<(), StateError> {
        use AlarmState::*;
        match (self.state, to) {
            (Raised, Acknowledged) | (Raised, Cleared) | (Acknowledged, Cleared) => {
                self.state = to;
                Ok(())
            }
            (from, to) => Err(StateError { from, to }),
        }
    }
}
