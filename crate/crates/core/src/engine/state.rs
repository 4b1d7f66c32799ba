use std::collections::BTreeMap;

use crate::domain::{AlarmEvent, DataPoint, PatientId, Severity, SeverityClass};

/// Time-ordered buffer of the most recent data-points, trimmed to a horizon.
#[derive(Debug, Clone, Default)]
pub struct Window {
    buf: Vec<DataPoint>,
    start: usize,
}

impl Window {
    /// Appends `dp` and drops points older than `horizon_ms` before it.
    pub(crate) fn push(&mut self, dp: DataPoint, horizon_ms: i64) {
        let cutoff = dp.timestamp_ms - horizon_ms;
        self.buf.push(dp);
        let live = &self.buf[self.start..];
        self.start += live.partition_point(|d| d.timestamp_ms <= cutoff);
        if self.start > 1024 && self.start * 2 > self.buf.len() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
    }

    pub fn as_slice(&self) -> &[DataPoint] {
        &self.buf[self.start..]
    }

    pub fn len(&self) -> usize {
        self.buf.len() - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last(&self) -> Option<&DataPoint> {
        self.as_slice().last()
    }
}

/// Where a multi-sign instability episode stands.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Episode {
    #[default]
    Idle,
    /// Advisory raised; waiting for return to normal.
    Open { onset_ms: i64, alarm_key: String },
    /// Return window elapsed without recovery.
    Escalated { onset_ms: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ActiveAlarm {
    pub event: AlarmEvent,
    /// Newest timestamp at which the driving condition held.
    pub last_true_ms: i64,
}

/// Everything the engine remembers about one patient.
#[derive(Debug, Clone)]
pub struct PatientState {
    pub(crate) patient_id: PatientId,
    pub(crate) window: Window,
    /// Raised or acknowledged alarms keyed by the rule that drives them.
    pub(crate) active: BTreeMap<String, ActiveAlarm>,
    pub(crate) last_assessment: SeverityClass,
    pub(crate) episode: Episode,
    /// Start of the current run of samples with two or more abnormal signs.
    pub(crate) unstable_since: Option<i64>,
    /// Start of the current run of samples with no abnormal sign.
    pub(crate) normal_since: Option<i64>,
    pub(crate) next_seq: u64,
}

impl PatientState {
    pub fn new(patient_id: PatientId) -> Self {
        Self {
            patient_id,
            window: Window::default(),
            active: BTreeMap::new(),
            last_assessment: SeverityClass::LowSeverity,
            episode: Episode::Idle,
            unstable_since: None,
            normal_since: None,
            next_seq: 1,
        }
    }

    pub fn patient_id(&self) -> &PatientId {
        &self.patient_id
    }

    pub fn window(&self) -> &[DataPoint] {
        self.window.as_slice()
    }

    pub fn last_timestamp(&self) -> Option<i64> {
        self.window.last().map(|d| d.timestamp_ms)
    }

    pub fn active_alarms(&self) -> impl Iterator<Item = &AlarmEvent> {
        self.active.values().map(|a| &a.event)
    }

    pub fn has_active_high(&self) -> bool {
        self.active_alarms().any(|a| a.severity == Severity::HighSeverity)
    }

    pub fn last_assessment(&self) -> SeverityClass {
        self.last_assessment
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub(crate) fn next_alarm_id(&mut self) -> String {
        let id = format!("{}-{}", self.patient_id, self.next_seq);
        self.next_seq += 1;
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DeviceMeta, VitalsSample};

    fn dp(t: i64) -> DataPoint {
        DataPoint {
            patient_id: "p".into(),
            device_id: "d".into(),
            timestamp_ms: t,
            vitals: VitalsSample::default(),
            device_meta: DeviceMeta::default(),
        }
    }

    #[test]
    fn window_respects_horizon() {
        let mut w = Window::default();
        for t in 1..=5000 {
            w.push(dp(t * 1000), 3_600_000);
        }
        assert_eq!(w.len(), 3600);
        assert_eq!(w.as_slice()[0].timestamp_ms, 1_401_000);
        assert!(w.as_slice().windows(2).all(|p| p[0].timestamp_ms < p[1].timestamp_ms));
    }
}
