//! Per-patient rule evaluation and the alarm state machine.
//!
//! [`AlarmEngine::evaluate`] appends one data-point to a patient's window,
//! asks the [`ConditionEvaluator`] which conditions hold, tracks multi-sign
//! instability episodes, and emits alarm transitions. Candidate raises pass
//! through [`crate::integrity::mask_or_escalate`] before they leave.

mod evaluator;
pub mod rules;
mod state;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AlarmEvent, AlarmPolicy, AlarmState, Channel, DataPoint, IntegrityFlag, PatientId,
    PatientProfile, RuleTraceEntry, Severity, SeverityClass, StateError, TraceOutcome,
};
use crate::integrity::{is_masked, mask_or_escalate};
use crate::wire::TransitionRecord;

pub use evaluator::{evidence_span, ConditionEvaluator, Finding, RuleEvaluator};
pub use state::{Episode, PatientState, Window};

use rules::{abnormal_signs, SignSet};
use state::ActiveAlarm;

pub mod rule_ids {
    pub const SPO2_PERSISTENT_LOW: &str = "spo2_persistent_low";
    pub const HR_PERSISTENT_HIGH: &str = "hr_persistent_high";
    pub const RR_TREND_HIGH: &str = "rr_trend_high";
    pub const TRANSIENT: &str = "transient_instability";
    pub const SUSTAINED: &str = "sustained_instability";
    pub const INTEGRITY_SUPPRESSED: &str = "integrity_suppressed";

    /// Rules deferred to the episode logic while two or more signs are
    /// abnormal, so a multi-sign episode first surfaces as one advisory.
    pub const HELD_BY_EPISODE: [&str; 2] = [HR_PERSISTENT_HIGH, RR_TREND_HIGH];
}

/// D-dimer fold increase at which a patient counts as high severity.
pub const D_DIMER_HIGH_FOLD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// How long a condition must stay absent before its alarm auto-clears.
    pub clear_hysteresis_s: u32,
    pub window_horizon_s: u32,
    /// How long every sign must stay normal for an episode to count as over.
    pub return_confirm_s: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            clear_hysteresis_s: 300,
            window_horizon_s: 3600,
            return_confirm_s: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("data-point at {ts} is not after the window's newest point {newest}")]
    OutOfOrderInput { ts: i64, newest: i64 },
    #[error("data-point for {got} fed to the state of {expected}")]
    PatientMismatch { expected: PatientId, got: PatientId },
    #[error("no active alarm {0}")]
    UnknownAlarm(String),
    #[error(transparent)]
    State(#[from] StateError),
}

/// One alarm state change. `alarm` is a snapshot taken after the change.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmTransition {
    pub alarm: AlarmEvent,
    pub ts: i64,
}

impl AlarmTransition {
    pub fn state(&self) -> AlarmState {
        self.alarm.state
    }

    pub fn record(&self) -> TransitionRecord {
        TransitionRecord::from_alarm(&self.alarm, self.alarm.state, self.ts)
    }
}

#[derive(Debug, Clone)]
pub struct AlarmEngine {
    config: EngineConfig,
    evaluator: Arc<dyn ConditionEvaluator>,
}

impl Default for AlarmEngine {
    fn default() -> Self {
        Self::new(EngineConfig::default())
    }
}

fn cleared(mut alarm: AlarmEvent, ts: i64, note: Option<RuleTraceEntry>) -> AlarmTransition {
    alarm.transition(AlarmState::Cleared).expect("active alarms can always clear");
    alarm.cleared_ms = Some(ts);
    alarm.rule_trace.extend(note);
    AlarmTransition { alarm, ts }
}

fn sign_channels(window: &[DataPoint], policy: &AlarmPolicy) -> Vec<Channel> {
    let mut all = SignSet::default();
    for d in window {
        for s in abnormal_signs(d, policy).iter() {
            all.insert(s);
        }
    }
    all.channels()
}

impl AlarmEngine {
    pub fn new(config: EngineConfig) -> Self {
        Self::with_evaluator(config, Arc::new(RuleEvaluator))
    }

    pub fn with_evaluator(config: EngineConfig, evaluator: Arc<dyn ConditionEvaluator>) -> Self {
        Self { config, evaluator }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn evaluator(&self) -> &Arc<dyn ConditionEvaluator> {
        &self.evaluator
    }

    /// Feeds one data-point. `flags` are the patient's integrity flags; only
    /// those active at the data-point's timestamp take effect.
    pub fn evaluate(
        &self,
        state: &mut PatientState,
        dp: DataPoint,
        policy: &AlarmPolicy,
        flags: &[IntegrityFlag],
    ) -> Result<Vec<AlarmTransition>, EngineError> {
        if dp.patient_id != state.patient_id {
            return Err(EngineError::PatientMismatch {
                expected: state.patient_id.clone(),
                got: dp.patient_id,
            });
        }
        let ts = dp.timestamp_ms;
        if let Some(newest) = state.last_timestamp() {
            if ts <= newest {
                return Err(EngineError::OutOfOrderInput { ts, newest });
            }
        }

        let signs = abnormal_signs(&dp, policy);
        state
            .window
            .push(dp, i64::from(self.config.window_horizon_s) * 1000);
        state.unstable_since = if signs.len() >= 2 { Some(state.unstable_since.unwrap_or(ts)) } else { None };
        state.normal_since = if signs.is_empty() { Some(state.normal_since.unwrap_or(ts)) } else { None };

        let mut clears: Vec<AlarmTransition> = Vec::new();
        let mut candidates: Vec<(String, AlarmEvent)> = Vec::new();

        let escalated_now = self.step_episode(state, ts, policy, &mut clears, &mut candidates);

        let held = match state.episode {
            Episode::Open { .. } => true,
            Episode::Escalated { .. } => false,
            Episode::Idle => signs.len() >= 2,
        };
        let findings = self.evaluator.evaluate(state.window.as_slice(), policy);
        let hysteresis_ms = i64::from(self.config.clear_hysteresis_s) * 1000;
        let mut escalation_matched = false;

        for f in &findings {
            let key = f.rule_id;
            let holdable = rule_ids::HELD_BY_EPISODE.contains(&key);
            if f.holds && holdable {
                escalation_matched = true;
            }
            match state.active.get_mut(key) {
                Some(a) if f.holds => {
                    a.last_true_ms = ts;
                    if a.event.rule_id == rule_ids::INTEGRITY_SUPPRESSED {
                        let real = self.candidate(state, f, ts, None);
                        if !is_masked(flags, &real) {
                            let a = state.active.remove(key).expect("checked above");
                            clears.push(cleared(
                                a.event,
                                ts,
                                Some(
                                    RuleTraceEntry::new(key, f64::NAN, f64::NAN, TraceOutcome::Unmasked)
                                        .with_detail("covering flag ended"),
                                ),
                            ));
                            let mut real = real;
                            real.alarm_id = state.next_alarm_id();
                            real.rule_trace.push(
                                RuleTraceEntry::new(key, f64::NAN, f64::NAN, TraceOutcome::Unmasked)
                                    .with_detail("raised after covering flag ended"),
                            );
                            candidates.push((key.to_string(), real));
                        }
                    }
                }
                Some(a) => {
                    if ts - a.last_true_ms >= hysteresis_ms {
                        let a = state.active.remove(key).expect("present");
                        let note = RuleTraceEntry::new(
                            key,
                            ((ts - a.last_true_ms) / 1000) as f64,
                            f64::from(self.config.clear_hysteresis_s),
                            TraceOutcome::Passed,
                        )
                        .with_detail("condition absent for clear hysteresis");
                        clears.push(cleared(a.event, ts, Some(note)));
                    }
                }
                None if f.holds && !(held && holdable) => {
                    let id = state.next_alarm_id();
                    let c = self.candidate(state, f, ts, Some(id));
                    candidates.push((key.to_string(), c));
                }
                None => {}
            }
        }

        if let (Some(onset), false) = (escalated_now, escalation_matched) {
            let id = state.next_alarm_id();
            let evidence = evidence_since(state.window.as_slice(), onset);
            let channels = sign_channels(evidence, policy);
            let alarm = AlarmEvent {
                alarm_id: id,
                patient_id: state.patient_id.clone(),
                rule_id: rule_ids::SUSTAINED.into(),
                severity: Severity::HighSeverity,
                trigger_time_ms: ts,
                evidence: Arc::from(evidence),
                channels,
                rule_trace: vec![RuleTraceEntry::new(
                    rule_ids::SUSTAINED,
                    ((ts - onset) / 1000) as f64,
                    f64::from(policy.transient_return_window_s),
                    TraceOutcome::Escalated,
                )
                .with_detail("no matching persistent rule holds; instability outlived the return window")],
                state: AlarmState::Raised,
                acknowledged_by: None,
                cleared_ms: None,
            };
            candidates.push((rule_ids::SUSTAINED.to_string(), alarm));
        }

        let mut key_of: HashMap<String, String> = candidates
            .iter()
            .map(|(k, a)| (a.alarm_id.clone(), k.clone()))
            .collect();
        let masked = mask_or_escalate(flags, candidates.into_iter().map(|(_, a)| a).collect());
        let mut raises = Vec::new();
        for alarm in masked.suppressed.into_iter().chain(masked.surviving) {
            let key = key_of.remove(&alarm.alarm_id).expect("every candidate has a key");
            state.active.insert(
                key,
                ActiveAlarm {
                    event: alarm.clone(),
                    last_true_ms: ts,
                },
            );
            raises.push(AlarmTransition { alarm, ts });
        }
        raises.sort_by(|a, b| a.alarm.alarm_id.cmp(&b.alarm.alarm_id));
        clears.extend(raises);
        Ok(clears)
    }

    /// Advances the instability episode. Returns the onset when the episode
    /// escalated on this sample.
    fn step_episode(
        &self,
        state: &mut PatientState,
        ts: i64,
        policy: &AlarmPolicy,
        clears: &mut Vec<AlarmTransition>,
        candidates: &mut Vec<(String, AlarmEvent)>,
    ) -> Option<i64> {
        let returned = state
            .normal_since
            .is_some_and(|n| ts - n >= i64::from(self.config.return_confirm_s) * 1000);
        match state.episode.clone() {
            Episode::Idle => {
                let onset = state.unstable_since?;
                let min_ms = i64::from(policy.transient_min_duration_s) * 1000;
                if ts - onset < min_ms {
                    return None;
                }
                let id = state.next_alarm_id();
                let evidence = evidence_since(state.window.as_slice(), onset);
                let signs = abnormal_signs(evidence.last().expect("non-empty"), policy);
                let alarm = AlarmEvent {
                    alarm_id: id,
                    patient_id: state.patient_id.clone(),
                    rule_id: rule_ids::TRANSIENT.into(),
                    severity: Severity::Advisory,
                    trigger_time_ms: ts,
                    evidence: Arc::from(evidence),
                    channels: signs.channels(),
                    rule_trace: vec![
                        RuleTraceEntry::new(rule_ids::TRANSIENT, signs.len() as f64, 2.0, TraceOutcome::Violated)
                            .with_detail(format!(
                                "abnormal: {}",
                                signs.iter().map(|s| format!("{s:?}").to_lowercase()).collect::<Vec<_>>().join(",")
                            )),
                        RuleTraceEntry::new(
                            format!("{}.duration", rule_ids::TRANSIENT),
                            ((ts - onset) / 1000) as f64,
                            f64::from(policy.transient_min_duration_s),
                            TraceOutcome::Passed,
                        ),
                    ],
                    state: AlarmState::Raised,
                    acknowledged_by: None,
                    cleared_ms: None,
                };
                candidates.push((rule_ids::TRANSIENT.to_string(), alarm));
                state.episode = Episode::Open {
                    onset_ms: onset,
                    alarm_key: rule_ids::TRANSIENT.to_string(),
                };
                None
            }
            Episode::Open { onset_ms, alarm_key } => {
                let elapsed_s = ((ts - onset_ms) / 1000) as f64;
                let window_s = f64::from(policy.transient_return_window_s);
                if returned {
                    if let Some(a) = state.active.remove(&alarm_key) {
                        let note = RuleTraceEntry::new(rule_ids::TRANSIENT, elapsed_s, window_s, TraceOutcome::Transient)
                            .with_detail("returned to normal within the return window");
                        clears.push(cleared(a.event, ts, Some(note)));
                    }
                    state.episode = Episode::Idle;
                    None
                } else if ts - onset_ms >= i64::from(policy.transient_return_window_s) * 1000 {
                    if let Some(a) = state.active.remove(&alarm_key) {
                        let note = RuleTraceEntry::new(rule_ids::TRANSIENT, elapsed_s, window_s, TraceOutcome::Escalated)
                            .with_detail("no return to normal within the return window");
                        clears.push(cleared(a.event, ts, Some(note)));
                    }
                    state.episode = Episode::Escalated { onset_ms };
                    Some(onset_ms)
                } else {
                    if let Some(a) = state.active.get_mut(&alarm_key) {
                        a.last_true_ms = ts;
                    }
                    None
                }
            }
            Episode::Escalated { .. } => {
                if returned {
                    if let Some(a) = state.active.remove(rule_ids::SUSTAINED) {
                        let note = RuleTraceEntry::new(rule_ids::SUSTAINED, f64::NAN, f64::NAN, TraceOutcome::Passed)
                            .with_detail("returned to normal");
                        clears.push(cleared(a.event, ts, Some(note)));
                    }
                    state.episode = Episode::Idle;
                } else if let Some(a) = state.active.get_mut(rule_ids::SUSTAINED) {
                    a.last_true_ms = ts;
                }
                None
            }
        }
    }

    fn candidate(&self, state: &PatientState, f: &Finding, ts: i64, id: Option<String>) -> AlarmEvent {
        let window = state.window.as_slice();
        AlarmEvent {
            alarm_id: id.unwrap_or_default(),
            patient_id: state.patient_id.clone(),
            rule_id: f.rule_id.to_string(),
            severity: f.severity,
            trigger_time_ms: ts,
            evidence: Arc::from(evidence_span(window, f)),
            channels: f.channels.clone(),
            rule_trace: f.trace.clone(),
            state: AlarmState::Raised,
            acknowledged_by: None,
            cleared_ms: None,
        }
    }

    /// Moves an active alarm to Acknowledged.
    pub fn acknowledge(
        &self,
        state: &mut PatientState,
        alarm_id: &str,
        by: &str,
        ts: i64,
    ) -> Result<AlarmTransition, EngineError> {
        let a = state
            .active
            .values_mut()
            .find(|a| a.event.alarm_id == alarm_id)
            .ok_or_else(|| EngineError::UnknownAlarm(alarm_id.to_string()))?;
        a.event.transition(AlarmState::Acknowledged)?;
        a.event.acknowledged_by = Some(by.to_string());
        Ok(AlarmTransition {
            alarm: a.event.clone(),
            ts,
        })
    }

    /// Records and returns the patient's severity class.
    pub fn assess(&self, state: &mut PatientState, profile: &PatientProfile) -> SeverityClass {
        let class = classify_severity(profile, state);
        state.last_assessment = class;
        class
    }
}

/// High severity iff a high-severity alarm is active or the D-dimer marker is
/// at least three-fold.
pub fn classify_severity(profile: &PatientProfile, state: &PatientState) -> SeverityClass {
    let d_dimer = profile
        .lab_markers
        .d_dimer_fold_increase
        .is_some_and(|f| f >= D_DIMER_HIGH_FOLD);
    if state.has_active_high() || d_dimer {
        SeverityClass::HighSeverity
    } else {
        SeverityClass::LowSeverity
    }
}

fn evidence_since(window: &[DataPoint], onset_ms: i64) -> &[DataPoint] {
    let i = window.partition_point(|d| d.timestamp_ms < onset_ms);
    &window[i..]
}

/// Re-runs the rule behind `alarm` on its evidence alone. `None` when the
/// rule is not one this engine can re-derive in isolation.
pub fn reproduces(
    engine: &AlarmEngine,
    alarm: &AlarmEvent,
    policy: &AlarmPolicy,
) -> Option<bool> {
    let ev = &alarm.evidence[..];
    match alarm.rule_id.as_str() {
        rule_ids::TRANSIENT => {
            let (first, last) = (ev.first()?, ev.last()?);
            Some(
                ev.iter().all(|d| abnormal_signs(d, policy).len() >= 2)
                    && last.timestamp_ms - first.timestamp_ms
                        >= i64::from(policy.transient_min_duration_s) * 1000,
            )
        }
        rule_ids::SUSTAINED => {
            let (first, last) = (ev.first()?, ev.last()?);
            let confirm = i64::from(engine.config.return_confirm_s) * 1000;
            let mut normal_since: Option<i64> = None;
            for d in ev {
                if abnormal_signs(d, policy).is_empty() {
                    let n = *normal_since.get_or_insert(d.timestamp_ms);
                    if d.timestamp_ms - n >= confirm {
                        return Some(false);
                    }
                } else {
                    normal_since = None;
                }
            }
            Some(
                abnormal_signs(first, policy).len() >= 2
                    && last.timestamp_ms - first.timestamp_ms
                        >= i64::from(policy.transient_return_window_s) * 1000,
            )
        }
        rule => engine
            .evaluator
            .evaluate(ev, policy)
            .into_iter()
            .find(|f| f.rule_id == rule)
            .map(|f| f.holds),
    }
}
