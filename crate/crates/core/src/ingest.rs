//! Per-device ingest sessions: parsing, validation, watermark ordering and
//! signal-gap detection.
//!
//! Network transport lives elsewhere; everything here is synchronous and
//! driven by an explicit `now_ms`, so replay can substitute a simulated
//! clock and get identical gap behavior.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::domain::{
    validate_datapoint, Channel, DataPoint, DeviceId, FlagKind, IntegrityFlag, PatientId,
    ValidationError,
};
use crate::registry::ProfileRegistry;
use crate::wire::{parse_record, ParseError};

pub const DEFAULT_GAP_THRESHOLD_S: u32 = 30;
pub const DEFAULT_CADENCE_MS: i64 = 1000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("session already open for {0}/{1}")]
    DuplicateSession(PatientId, DeviceId),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownPatient(_) => "unknown_patient",
            SessionError::DuplicateSession(..) => "duplicate_session",
        }
    }
}

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("stale timestamp {ts} (watermark {watermark})")]
    StaleTimestamp { ts: i64, watermark: i64 },
    #[error("validation failed: {0}")]
    Validation(#[from] ValidationError),
    #[error("record for {0}/{1} sent on another device's session")]
    SessionMismatch(PatientId, DeviceId),
}

impl SubmitError {
    /// Wire error code for the reject line.
    pub fn code(&self) -> String {
        match self {
            SubmitError::Parse(_) => "parse_error".into(),
            SubmitError::StaleTimestamp { .. } => "stale_timestamp".into(),
            SubmitError::Validation(v) => format!("validation_error:{}", v.code()),
            SubmitError::SessionMismatch(..) => "session_mismatch".into(),
        }
    }
}

/// A data-point that passed ingest, ready to be forwarded exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct Accepted {
    pub datapoint: DataPoint,
    /// Gap flag closed by this arrival, if one was open.
    pub closed_gap: Option<IntegrityFlag>,
}

impl Accepted {
    pub fn ack_ts(&self) -> i64 {
        self.datapoint.timestamp_ms
    }
}

type DeviceRegistry = Arc<Mutex<HashSet<(PatientId, DeviceId)>>>;

#[derive(Debug)]
pub struct Session {
    session_id: u64,
    patient_id: PatientId,
    device_id: DeviceId,
    opened_ms: i64,
    watermark_ms: i64,
    last_seen_ms: i64,
    last_accepted_ms: Option<i64>,
    open_gap: Option<IntegrityFlag>,
    gap_threshold_ms: i64,
    cadence_ms: i64,
    registry_key: Option<DeviceRegistry>,
}

impl Session {
    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    pub fn patient_id(&self) -> &PatientId {
        &self.patient_id
    }

    pub fn device_id(&self) -> &DeviceId {
        &self.device_id
    }

    pub fn opened_ms(&self) -> i64 {
        self.opened_ms
    }

    pub fn watermark_ms(&self) -> i64 {
        self.watermark_ms
    }

    pub fn last_seen_ms(&self) -> i64 {
        self.last_seen_ms
    }

    pub fn open_gap(&self) -> Option<&IntegrityFlag> {
        self.open_gap.as_ref()
    }

    /// Parses, validates and orders one raw line.
    pub fn submit(&mut self, raw: &[u8], now_ms: i64) -> Result<Accepted, SubmitError> {
        self.last_seen_ms = now_ms;
        let dp = parse_record(raw)?;
        self.accept(dp, now_ms)
    }

    /// Same as [`submit`](Self::submit) for an already parsed data-point.
    pub fn accept(&mut self, dp: DataPoint, now_ms: i64) -> Result<Accepted, SubmitError> {
        self.last_seen_ms = now_ms;
        validate_datapoint(&dp)?;
        if dp.patient_id != self.patient_id || dp.device_id != self.device_id {
            return Err(SubmitError::SessionMismatch(dp.patient_id, dp.device_id));
        }
        if dp.timestamp_ms <= self.watermark_ms {
            return Err(SubmitError::StaleTimestamp {
                ts: dp.timestamp_ms,
                watermark: self.watermark_ms,
            });
        }
        self.watermark_ms = dp.timestamp_ms;
        self.last_accepted_ms = Some(dp.timestamp_ms);
        let closed_gap = self.open_gap.take().map(|mut f| {
            f.end_ms = Some(dp.timestamp_ms.max(f.start_ms));
            f
        });
        Ok(Accepted {
            datapoint: dp,
            closed_gap,
        })
    }

    /// Opens a gap flag once `now_ms` is at least the gap threshold past the
    /// last accepted data-point. Returns the flag only at the moment it opens.
    pub fn detect_gap(&mut self, now_ms: i64) -> Option<IntegrityFlag> {
        if self.open_gap.is_some() {
            return None;
        }
        let last = self.last_accepted_ms?;
        if now_ms - last < self.gap_threshold_ms {
            return None;
        }
        let flag = IntegrityFlag {
            patient_id: self.patient_id.clone(),
            device_id: self.device_id.clone(),
            kind: FlagKind::Gap,
            start_ms: last + self.cadence_ms,
            end_ms: None,
            affected_channels: Channel::ALL.to_vec(),
        };
        self.open_gap = Some(flag.clone());
        Some(flag)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Some(open) = self.registry_key.take() {
            open.lock()
                .unwrap()
                .remove(&(self.patient_id.clone(), self.device_id.clone()));
        }
    }
}

/// Hands out sessions, at most one per open (patient, device) pair.
/// Dropping a [`Session`] closes it.
#[derive(Debug)]
pub struct Gateway {
    registry: Arc<ProfileRegistry>,
    open: DeviceRegistry,
    next_id: AtomicU64,
    gap_threshold_ms: i64,
    cadence_ms: i64,
}

impl Gateway {
    pub fn new(registry: Arc<ProfileRegistry>) -> Self {
        Self::with_gap_threshold(registry, DEFAULT_GAP_THRESHOLD_S)
    }

    pub fn with_gap_threshold(registry: Arc<ProfileRegistry>, gap_threshold_s: u32) -> Self {
        Self {
            registry,
            open: Arc::new(Mutex::new(HashSet::new())),
            next_id: AtomicU64::new(1),
            gap_threshold_ms: i64::from(gap_threshold_s) * 1000,
            cadence_ms: DEFAULT_CADENCE_MS,
        }
    }

    pub fn registry(&self) -> &Arc<ProfileRegistry> {
        &self.registry
    }

    pub fn open_session(
        &self,
        patient_id: &PatientId,
        device_id: &DeviceId,
        now_ms: i64,
    ) -> Result<Session, SessionError> {
        if self.registry.lookup(patient_id).is_none() {
            return Err(SessionError::UnknownPatient(patient_id.clone()));
        }
        let key = (patient_id.clone(), device_id.clone());
        if !self.open.lock().unwrap().insert(key) {
            return Err(SessionError::DuplicateSession(
                patient_id.clone(),
                device_id.clone(),
            ));
        }
        Ok(Session {
            session_id: self.next_id.fetch_add(1, Ordering::Relaxed),
            patient_id: patient_id.clone(),
            device_id: device_id.clone(),
            opened_ms: now_ms,
            watermark_ms: 0,
            last_seen_ms: now_ms,
            last_accepted_ms: None,
            open_gap: None,
            gap_threshold_ms: self.gap_threshold_ms,
            cadence_ms: self.cadence_ms,
            registry_key: Some(self.open.clone()),
        })
    }

    pub fn open_sessions(&self) -> usize {
        self.open.lock().unwrap().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AlarmPolicy, PatientProfile};
    use proptest::prelude::*;

    fn gateway() -> Gateway {
        let reg = ProfileRegistry::new(AlarmPolicy::default(), false);
        reg.register(PatientProfile::new("p1", 40)).unwrap();
        Gateway::new(Arc::new(reg))
    }

    fn line(ts: i64, spo2: f64) -> Vec<u8> {
        format!(r#"{{"pid":"p1","did":"d1","ts":{ts},"v":{{"spo2":{spo2},"hr":70}}}}"#).into_bytes()
    }

    #[test]
    fn open_session_rules() {
        let g = gateway();
        let s = g.open_session(&"p1".into(), &"d1".into(), 0).unwrap();
        assert_eq!(s.watermark_ms(), 0);
        assert_eq!(
            g.open_session(&"pX".into(), &"d1".into(), 0).unwrap_err(),
            SessionError::UnknownPatient("pX".into())
        );
        assert!(matches!(
            g.open_session(&"p1".into(), &"d1".into(), 0),
            Err(SessionError::DuplicateSession(..))
        ));
        drop(s);
        assert!(g.open_session(&"p1".into(), &"d1".into(), 0).is_ok());
    }

    #[test]
    fn submit_orders_by_watermark() {
        let g = gateway();
        let mut s = g.open_session(&"p1".into(), &"d1".into(), 0).unwrap();
        let a = s.submit(&line(1000, 97.0), 0).unwrap();
        assert_eq!(a.ack_ts(), 1000);
        assert_eq!(s.watermark_ms(), 1000);
        assert!(matches!(
            s.submit(&line(500, 97.0), 0),
            Err(SubmitError::StaleTimestamp { ts: 500, watermark: 1000 })
        ));
        assert_eq!(s.watermark_ms(), 1000);
    }

    #[test]
    fn submit_wraps_validation() {
        let g = gateway();
        let mut s = g.open_session(&"p1".into(), &"d1".into(), 0).unwrap();
        let raw = line(1000, 135.0);
        let expected = validate_datapoint(&parse_record(&raw).unwrap())
            .map(|_| ())
            .unwrap_err();
        match s.submit(&raw, 0) {
            Err(SubmitError::Validation(v)) => assert_eq!(v, expected),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(expected, ValidationError::RangeViolation("spo2_percent"));
        assert_eq!(s.watermark_ms(), 0);
        assert!(matches!(s.submit(b"{", 0), Err(SubmitError::Parse(_))));
    }

    #[test]
    fn gap_opens_after_threshold_and_closes_on_arrival() {
        let g = gateway();
        let mut s = g.open_session(&"p1".into(), &"d1".into(), 0).unwrap();
        // no data yet: nothing to measure against
        assert!(s.detect_gap(100_000).is_none());
        s.submit(&line(1, 97.0), 1).unwrap();
        assert!(s.detect_gap(10_001).is_none());
        let f = s.detect_gap(31_001).expect("31 s >= 30 s threshold");
        assert_eq!(f.start_ms, 1 + 1000);
        assert!(f.is_open());
        assert!(s.detect_gap(40_000).is_none(), "reported once");
        let a = s.submit(&line(90_001, 97.0), 90_001).unwrap();
        let closed = a.closed_gap.unwrap();
        assert_eq!(closed.end_ms, Some(90_001));
        assert!(!closed.is_active_at(90_001));
    }

    proptest! {
        #[test]
        fn watermark_never_decreases(ts in proptest::collection::vec(-5i64..5000, 1..60)) {
            let g = gateway();
            let mut s = g.open_session(&"p1".into(), &"d1".into(), 0).unwrap();
            let mut prev = s.watermark_ms();
            for t in ts {
                let accepted = s.submit(&line(t, 97.0), 0).is_ok();
                prop_assert!(s.watermark_ms() >= prev);
                prop_assert_eq!(accepted, s.watermark_ms() == t && t > prev);
                prev = s.watermark_ms();
            }
        }
    }
}
