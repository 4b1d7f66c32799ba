//! Routing of topic events to subscribed recipients, acknowledgment, and
//! justification bundles.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AlarmEvent, AlarmState, DataPoint, PatientId, PatientProfile, RuleTraceEntry, Severity,
};
use crate::engine::AlarmTransition;
use crate::wire::{FlagRecord, TopicEvent, TransitionRecord};

pub const DEFAULT_LOOKBACK_S: u32 = 1800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum Role {
    PCP,
    ER_Physician,
    Paramedic,
    Admin,
}

/// Which patients a subscription covers. Serialized as `"ALL"` or a list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FilterRepr", into = "FilterRepr")]
pub enum PatientFilter {
    All,
    Only(BTreeSet<PatientId>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FilterRepr {
    Keyword(String),
    List(Vec<PatientId>),
}

impl TryFrom<FilterRepr> for PatientFilter {
    type Error = String;

    fn try_from(r: FilterRepr) -> Result<Self, String> {
        match r {
            FilterRepr::Keyword(k) if k == "ALL" => Ok(PatientFilter::All),
            FilterRepr::Keyword(k) => Err(format!("expected \"ALL\" or a list of patients, got {k:?}")),
            FilterRepr::List(l) => Ok(PatientFilter::Only(l.into_iter().collect())),
        }
    }
}

impl From<PatientFilter> for FilterRepr {
    fn from(f: PatientFilter) -> Self {
        match f {
            PatientFilter::All => FilterRepr::Keyword("ALL".into()),
            PatientFilter::Only(s) => FilterRepr::List(s.into_iter().collect()),
        }
    }
}

impl PatientFilter {
    pub fn matches(&self, pid: &str) -> bool {
        match self {
            PatientFilter::All => true,
            PatientFilter::Only(s) => s.iter().any(|p| p.as_str() == pid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subscription {
    pub recipient_id: String,
    pub role: Role,
    #[serde(rename = "patients")]
    pub patient_filter: PatientFilter,
    pub min_severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("subscription has an empty recipient_id")]
pub struct EmptyRecipient;

impl Subscription {
    pub fn new(recipient_id: impl Into<String>, role: Role, filter: PatientFilter, min: Severity) -> Result<Self, EmptyRecipient> {
        let s = Self {
            recipient_id: recipient_id.into(),
            role,
            patient_filter: filter,
            min_severity: min,
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), EmptyRecipient> {
        if self.recipient_id.trim().is_empty() {
            return Err(EmptyRecipient);
        }
        Ok(())
    }

    pub fn accepts(&self, pid: &str, severity: Severity) -> bool {
        severity >= self.min_severity && self.patient_filter.matches(pid)
    }
}

/// Severity an event is routed at. Integrity flags travel as advisories.
pub fn event_severity(event: &TopicEvent) -> Severity {
    match event {
        TopicEvent::Transition(t) => t.sev,
        TopicEvent::Flag(_) => Severity::Advisory,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub notification_id: String,
    pub recipient_id: String,
    pub event: TopicEvent,
    /// Engine transition time (wall clock of emission).
    pub created_ms: i64,
    pub dispatched_ms: Option<i64>,
    pub delivered_ms: Option<i64>,
}

impl Notification {
    pub fn latency_ms(&self) -> Option<i64> {
        self.delivered_ms.map(|d| d - self.created_ms)
    }

    pub fn consumer_line(&self) -> ConsumerLine {
        let (alarm, flag) = match &self.event {
            TopicEvent::Transition(t) => (Some(t.clone()), None),
            TopicEvent::Flag(f) => (None, Some(f.clone())),
        };
        ConsumerLine {
            nid: self.notification_id.clone(),
            alarm,
            flag,
            created: self.created_ms,
        }
    }
}

/// One line pushed to a consumer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumerLine {
    pub nid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alarm: Option<TransitionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<FlagRecord>,
    pub created: i64,
}

impl ConsumerLine {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("consumer line serializes")
    }
}

/// A consumer's receipt for one notification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumerAck {
    pub nid: String,
    pub ack: bool,
}

/// One notification per subscription accepting `event`. Ids are drawn from
/// `next_id` so a single router yields unique, ordered ids.
pub fn route(
    event: &TopicEvent,
    created_ms: i64,
    subscriptions: &[Subscription],
    next_id: &mut u64,
) -> Vec<Notification> {
    let sev = event_severity(event);
    subscriptions
        .iter()
        .filter(|s| s.accepts(event.patient(), sev))
        .map(|s| {
            let n = Notification {
                notification_id: format!("n{next_id}"),
                recipient_id: s.recipient_id.clone(),
                event: event.clone(),
                created_ms,
                dispatched_ms: None,
                delivered_ms: None,
            };
            *next_id += 1;
            n
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AckError {
    #[error("unknown alarm {0}")]
    UnknownAlarm(String),
    #[error("{0} holds no subscription covering this alarm")]
    NotAuthorized(String),
    #[error("already acknowledged by {by}")]
    AlreadyAcknowledged { by: String },
    #[error("alarm is {0}, not raised")]
    NotRaised(AlarmState),
}

impl AckError {
    pub fn code(&self) -> &'static str {
        match self {
            AckError::UnknownAlarm(_) => "unknown_alarm",
            AckError::NotAuthorized(_) => "not_authorized",
            AckError::AlreadyAcknowledged { .. } => "already_acknowledged",
            AckError::NotRaised(_) => "not_raised",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JustificationError {
    #[error("unknown alarm {0}")]
    UnknownAlarm(String),
    #[error("evidence for alarm {0} is no longer retained")]
    EvidenceExpired(String),
}

impl JustificationError {
    pub fn code(&self) -> &'static str {
        match self {
            JustificationError::UnknownAlarm(_) => "unknown_alarm",
            JustificationError::EvidenceExpired(_) => "evidence_expired",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JustificationBundle {
    pub alarm: AlarmEvent,
    pub vitals_history: Vec<DataPoint>,
    pub profile_snapshot: PatientProfile,
    pub rule_trace: Vec<RuleTraceEntry>,
}

impl JustificationBundle {
    /// Whether the history spans the alarm's evidence interval.
    pub fn covers_evidence(&self) -> bool {
        match (self.vitals_history.first(), self.vitals_history.last()) {
            (Some(a), Some(b)) => {
                a.timestamp_ms <= self.alarm.evidence_from() && b.timestamp_ms >= self.alarm.evidence_to()
            }
            _ => self.alarm.evidence.is_empty(),
        }
    }
}

#[derive(Debug, Clone)]
struct LedgerEntry {
    alarm: AlarmEvent,
    history: Arc<[DataPoint]>,
    profile: PatientProfile,
    raised_ms: i64,
}

/// Every alarm raised within the retention horizon, with the history needed
/// to justify it. Acknowledgment goes through here so concurrent attempts
/// resolve against one record.
#[derive(Debug, Clone)]
pub struct AlarmLedger {
    retention_ms: i64,
    lookback_ms: i64,
    entries: HashMap<String, LedgerEntry>,
}

impl AlarmLedger {
    pub fn new(retention_s: u32, lookback_s: u32) -> Self {
        Self {
            retention_ms: i64::from(retention_s) * 1000,
            lookback_ms: i64::from(lookback_s) * 1000,
            entries: HashMap::new(),
        }
    }

    /// Records a transition. On a raise, snapshots the trailing lookback of
    /// `window` (and the whole evidence interval) together with the profile.
    pub fn record(&mut self, t: &AlarmTransition, window: &[DataPoint], profile: &PatientProfile) {
        let a = &t.alarm;
        match self.entries.get_mut(&a.alarm_id) {
            Some(e) => e.alarm = a.clone(),
            None => {
                let from = (a.trigger_time_ms - self.lookback_ms).min(a.evidence_from());
                let lo = window.partition_point(|d| d.timestamp_ms < from);
                let hi = window.partition_point(|d| d.timestamp_ms <= a.trigger_time_ms);
                self.entries.insert(
                    a.alarm_id.clone(),
                    LedgerEntry {
                        alarm: a.clone(),
                        history: Arc::from(&window[lo..hi]),
                        profile: profile.clone(),
                        raised_ms: t.ts,
                    },
                );
            }
        }
    }

    pub fn get(&self, alarm_id: &str) -> Option<&AlarmEvent> {
        self.entries.get(alarm_id).map(|e| &e.alarm)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Raised → Acknowledged, at most once per alarm.
    pub fn acknowledge(
        &mut self,
        alarm_id: &str,
        recipient_id: &str,
        subscriptions: &[Subscription],
    ) -> Result<AlarmEvent, AckError> {
        let e = self
            .entries
            .get_mut(alarm_id)
            .ok_or_else(|| AckError::UnknownAlarm(alarm_id.to_string()))?;
        let a = &mut e.alarm;
        let authorized = subscriptions
            .iter()
            .any(|s| s.recipient_id == recipient_id && s.accepts(a.patient_id.as_str(), a.severity));
        if !authorized {
            return Err(AckError::NotAuthorized(recipient_id.to_string()));
        }
        match a.state {
            AlarmState::Raised => {
                a.transition(AlarmState::Acknowledged).expect("raised can be acknowledged");
                a.acknowledged_by = Some(recipient_id.to_string());
                Ok(a.clone())
            }
            AlarmState::Acknowledged => Err(AckError::AlreadyAcknowledged {
                by: a.acknowledged_by.clone().unwrap_or_default(),
            }),
            s => Err(AckError::NotRaised(s)),
        }
    }

    pub fn build_justification(&self, alarm_id: &str, now_ms: i64) -> Result<JustificationBundle, JustificationError> {
        let e = self
            .entries
            .get(alarm_id)
            .ok_or_else(|| JustificationError::UnknownAlarm(alarm_id.to_string()))?;
        if now_ms - e.raised_ms > self.retention_ms {
            return Err(JustificationError::EvidenceExpired(alarm_id.to_string()));
        }
        Ok(JustificationBundle {
            alarm: e.alarm.clone(),
            vitals_history: e.history.to_vec(),
            profile_snapshot: e.profile.clone(),
            rule_trace: e.alarm.rule_trace.clone(),
        })
    }

    /// Forgets alarms that are cleared and past retention. Expired alarms
    /// that are still active are kept so they can be acknowledged.
    pub fn prune(&mut self, now_ms: i64) {
        let keep_ms = self.retention_ms * 2;
        self.entries
            .retain(|_, e| e.alarm.state.is_active() || now_ms - e.raised_ms <= keep_ms);
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
