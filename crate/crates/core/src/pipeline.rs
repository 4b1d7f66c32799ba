//! Per-patient evaluation context: integrity screening followed by the alarm
//! engine. The server keeps one behind a mutex per patient; replay drives one
//! directly.

use crate::domain::{AlarmPolicy, DataPoint, IntegrityFlag, PatientId};
use crate::engine::{AlarmEngine, AlarmTransition, EngineError, PatientState};
use crate::integrity::{FlagUpdate, IntegrityConfig, IntegrityMonitor};
use crate::wire::{FlagRecord, TopicEvent};

/// Closed flags are kept this long so late evidence still sees them.
const CLOSED_FLAG_RETENTION_MS: i64 = 3_600_000;

#[derive(Debug, Clone)]
pub struct PatientPipeline {
    state: PatientState,
    monitor: IntegrityMonitor,
    flags: Vec<IntegrityFlag>,
    masking: bool,
}

/// Output of one ingest step, in publication order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub flags: Vec<IntegrityFlag>,
    pub transitions: Vec<AlarmTransition>,
}

impl StepOutput {
    pub fn is_empty(&self) -> bool {
        self.flags.is_empty() && self.transitions.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = TopicEvent> + '_ {
        self.flags
            .iter()
            .map(|f| TopicEvent::Flag(FlagRecord::from(f)))
            .chain(self.transitions.iter().map(|t| TopicEvent::Transition(t.record())))
    }
}

impl PatientPipeline {
    pub fn new(patient_id: PatientId, integrity: IntegrityConfig, masking: bool) -> Self {
        Self {
            state: PatientState::new(patient_id),
            monitor: IntegrityMonitor::new(integrity),
            flags: Vec::new(),
            masking,
        }
    }

    pub fn state(&self) -> &PatientState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut PatientState {
        &mut self.state
    }

    /// Flags currently open or closed within the retention horizon.
    pub fn flags(&self) -> &[IntegrityFlag] {
        &self.flags
    }

    pub fn masking(&self) -> bool {
        self.masking
    }

    /// Records an externally detected flag change, such as a signal gap
    /// reported by the gateway.
    pub fn apply_flag(&mut self, flag: IntegrityFlag) {
        match self.flags.iter_mut().find(|f| same_flag(f, &flag)) {
            Some(f) => *f = flag,
            None => self.flags.push(flag),
        }
    }

    /// Screens and evaluates one accepted data-point.
    pub fn step(
        &mut self,
        engine: &AlarmEngine,
        dp: DataPoint,
        policy: &AlarmPolicy,
    ) -> Result<StepOutput, EngineError> {
        if let Some(newest) = self.state.last_timestamp() {
            if dp.timestamp_ms <= newest {
                return Err(EngineError::OutOfOrderInput {
                    ts: dp.timestamp_ms,
                    newest,
                });
            }
        }
        let mut out = StepOutput::default();
        for u in self.monitor.observe(&dp) {
            let f = match u {
                FlagUpdate::Opened(f) | FlagUpdate::Closed(f) | FlagUpdate::Reopened(f) => f,
            };
            self.apply_flag(f.clone());
            out.flags.push(f);
        }
        let ts = dp.timestamp_ms;
        self.flags
            .retain(|f| f.end_ms.is_none_or(|e| ts - e <= CLOSED_FLAG_RETENTION_MS));
        let flags: &[IntegrityFlag] = if self.masking { &self.flags } else { &[] };
        out.transitions = engine.evaluate(&mut self.state, dp, policy, flags)?;
        Ok(out)
    }
}

fn same_flag(a: &IntegrityFlag, b: &IntegrityFlag) -> bool {
    a.kind == b.kind
        && a.start_ms == b.start_ms
        && a.device_id == b.device_id
        && a.affected_channels == b.affected_channels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DeviceMeta, VitalsSample};
    use crate::engine::rule_ids;

    fn dp(t: i64, spo2: f64) -> DataPoint {
        DataPoint {
            patient_id: "p".into(),
            device_id: "d".into(),
            timestamp_ms: 1_000 + t * 1000,
            vitals: VitalsSample {
                spo2_percent: Some(spo2),
                heart_rate_bpm: Some(72.0 + (t % 7) as f64),
                ..Default::default()
            },
            device_meta: DeviceMeta::default(),
        }
    }

    #[test]
    fn stuck_low_spo2_is_suppressed_only_with_masking() {
        let engine = AlarmEngine::default();
        let policy = AlarmPolicy::default();
        let rules_raised = |masking: bool| {
            let mut p = PatientPipeline::new("p".into(), IntegrityConfig::default(), masking);
            let mut rules = Vec::new();
            for t in 0..200 {
                let out = p.step(&engine, dp(t, 80.0), &policy).unwrap();
                rules.extend(out.transitions.into_iter().map(|t| t.alarm.rule_id));
            }
            rules
        };
        // the flag opens at sample 120, after the alarm fired at 48
        assert_eq!(rules_raised(true), vec![rule_ids::SPO2_PERSISTENT_LOW]);
        assert_eq!(rules_raised(false), vec![rule_ids::SPO2_PERSISTENT_LOW]);
    }

    #[test]
    fn flags_are_published_before_transitions() {
        let engine = AlarmEngine::default();
        let policy = AlarmPolicy::default();
        let mut p = PatientPipeline::new("p".into(), IntegrityConfig::default(), true);
        let mut lines = Vec::new();
        for t in 0..10 {
            let mut d = dp(t, 97.0 + t as f64 * 0.1);
            d.device_meta.battery_percent = Some(5.0);
            lines.extend(p.step(&engine, d, &policy).unwrap().events().map(|e| e.to_line()));
        }
        assert_eq!(lines.len(), 1);
        assert!(lines[0].starts_with(r#"{"flag":"Fault_LowBattery""#));
    }
}
