//! Shared server state and the synchronous processing path.
//!
//! Lock order is session, then patient, then ledger. Nothing holds a lock
//! across an await point.

use std::collections::HashMap;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rpm_core::config::{Config, ConfigError};
use rpm_core::engine::{AlarmEngine, AlarmTransition, EngineError};
use rpm_core::ingest::{Accepted, Gateway, Session, SubmitError};
use rpm_core::notify::{AckError, AlarmLedger, JustificationBundle, JustificationError};
use rpm_core::registry::{OverrideError, ProfileRegistry};
use rpm_core::wire::{parse_record, AckLine, FlagRecord, TopicEvent};
use rpm_core::{AlarmEvent, AlarmPolicy, DeviceId, IntegrityFlag, PatientId, PatientProfile, SeverityClass};
use rpm_core::{domain::PolicyError, pipeline::PatientPipeline};
use serde::Serialize;
use tokio::sync::broadcast;

use crate::router::Router;

/// Capacity of the console broadcast; slower consoles skip ahead.
const TOPIC_CAPACITY: usize = 16_384;

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

/// Ingest counters since startup.
#[derive(Debug, Default)]
struct Counters {
    submitted: AtomicU64,
    accepted: AtomicU64,
    rejected: AtomicU64,
    stale: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub submitted: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub stale: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PatientSnapshot {
    pub pid: PatientId,
    pub severity: SeverityClass,
    pub policy: AlarmPolicy,
    pub active_alarms: Vec<AlarmEvent>,
    pub flags: Vec<FlagRecord>,
}

pub struct Hub {
    config: Config,
    registry: Arc<ProfileRegistry>,
    gateway: Gateway,
    engine: AlarmEngine,
    patients: Mutex<HashMap<PatientId, Arc<Mutex<PatientPipeline>>>>,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    ledger: Mutex<AlarmLedger>,
    router: Router,
    topic: broadcast::Sender<Arc<str>>,
    counters: Counters,
    /// Newest accepted data timestamp; alarm retention is measured on it.
    data_clock_ms: AtomicI64,
}

impl Hub {
    pub fn new(config: Config) -> Result<Self, ConfigError> {
        let registry = Arc::new(ProfileRegistry::new(config.policy.clone(), config.auto_register));
        for p in config.load_profiles()? {
            let path = config.profiles_path.clone().unwrap_or_default();
            registry.register(p).map_err(|e| ConfigError::Profiles {
                path,
                message: e.to_string(),
            })?;
        }
        let (topic, _) = broadcast::channel(TOPIC_CAPACITY);
        Ok(Self {
            gateway: Gateway::with_gap_threshold(registry.clone(), config.gap_threshold_s),
            engine: AlarmEngine::new(config.engine.clone()),
            patients: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
            ledger: Mutex::new(AlarmLedger::new(config.retention_s, config.lookback_s)),
            router: Router::new(config.subscriptions.clone()),
            topic,
            counters: Counters::default(),
            data_clock_ms: AtomicI64::new(0),
            registry,
            config,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn registry(&self) -> &ProfileRegistry {
        &self.registry
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn subscribe_topic(&self) -> broadcast::Receiver<Arc<str>> {
        self.topic.subscribe()
    }

    pub fn auth_ok(&self, token: Option<&str>) -> bool {
        match &self.config.auth_token {
            None => true,
            Some(t) => token == Some(t.as_str()),
        }
    }

    pub fn ingest_stats(&self) -> IngestStats {
        let c = &self.counters;
        IngestStats {
            submitted: c.submitted.load(Ordering::Relaxed),
            accepted: c.accepted.load(Ordering::Relaxed),
            rejected: c.rejected.load(Ordering::Relaxed),
            stale: c.stale.load(Ordering::Relaxed),
        }
    }

    fn pipeline(&self, pid: &PatientId) -> Arc<Mutex<PatientPipeline>> {
        self.patients
            .lock()
            .unwrap()
            .entry(pid.clone())
            .or_insert_with(|| {
                Arc::new(Mutex::new(PatientPipeline::new(
                    pid.clone(),
                    self.config.integrity.clone(),
                    self.config.masking,
                )))
            })
            .clone()
    }

    /// Publishes to the console topic and the recipient queues.
    fn publish(&self, events: impl IntoIterator<Item = TopicEvent>, created_ms: i64) {
        for e in events {
            let _ = self.topic.send(Arc::from(e.to_line()));
            self.router.dispatch(&e, created_ms);
        }
    }

    pub fn data_clock_ms(&self) -> i64 {
        self.data_clock_ms.load(Ordering::Relaxed)
    }

    fn forward(&self, accepted: Accepted) {
        self.data_clock_ms.fetch_max(accepted.datapoint.timestamp_ms, Ordering::Relaxed);
        let pid = accepted.datapoint.patient_id.clone();
        let Some(reg) = self.registry.get(&pid) else {
            tracing::warn!(%pid, "accepted point for a patient missing from the registry");
            return;
        };
        let slot = self.pipeline(&pid);
        let mut p = slot.lock().unwrap();
        let mut events = Vec::new();
        if let Some(gap) = accepted.closed_gap {
            events.push(TopicEvent::Flag(FlagRecord::from(&gap)));
            p.apply_flag(gap);
        }
        match p.step(&self.engine, accepted.datapoint, &reg.policy) {
            Ok(out) => {
                if !out.transitions.is_empty() {
                    let mut ledger = self.ledger.lock().unwrap();
                    for t in &out.transitions {
                        ledger.record(t, p.state().window(), &reg.profile);
                    }
                }
                events.extend(out.events());
            }
            // another device of the same patient is ahead; evaluation skips it
            Err(EngineError::OutOfOrderInput { .. }) => {}
            Err(e) => tracing::warn!(%pid, error = %e, "engine rejected a point"),
        }
        self.publish(events, now_ms());
    }

    /// Opens a gap flag on every session that has gone quiet.
    pub fn tick(&self, now: i64) {
        let sessions: Vec<_> = self.sessions.lock().unwrap().values().cloned().collect();
        for s in sessions {
            let gap = s.lock().unwrap().detect_gap(now);
            if let Some(flag) = gap {
                self.apply_external_flag(flag);
            }
        }
    }

    fn apply_external_flag(&self, flag: IntegrityFlag) {
        let slot = self.pipeline(&flag.patient_id);
        let mut p = slot.lock().unwrap();
        let event = TopicEvent::Flag(FlagRecord::from(&flag));
        p.apply_flag(flag);
        self.publish([event], now_ms());
    }

    /// Raised → Acknowledged. The ledger decides the winner; the engine copy
    /// and the topic follow.
    pub fn acknowledge(&self, alarm_id: &str, recipient: &str) -> Result<AlarmEvent, AckError> {
        let pid = self
            .ledger
            .lock()
            .unwrap()
            .get(alarm_id)
            .map(|a| a.patient_id.clone())
            .ok_or_else(|| AckError::UnknownAlarm(alarm_id.to_string()))?;
        let slot = self.pipeline(&pid);
        let mut p = slot.lock().unwrap();
        let alarm = self
            .ledger
            .lock()
            .unwrap()
            .acknowledge(alarm_id, recipient, self.router.subscriptions())?;
        let now = now_ms();
        // the engine may have cleared it since; the ledger record stands
        let _ = self.engine.acknowledge(p.state_mut(), alarm_id, recipient, now);
        let t = AlarmTransition { alarm: alarm.clone(), ts: now };
        self.publish([TopicEvent::Transition(t.record())], now);
        Ok(alarm)
    }

    pub fn justify(&self, alarm_id: &str) -> Result<JustificationBundle, JustificationError> {
        self.ledger.lock().unwrap().build_justification(alarm_id, self.data_clock_ms())
    }

    pub fn set_override(&self, pid: &PatientId, field: &str, value: serde_json::Value) -> Result<AlarmPolicy, OverrideError> {
        self.registry.set_override(pid, field, value)
    }

    pub fn register(&self, profile: PatientProfile) -> Result<AlarmPolicy, PolicyError> {
        self.registry.register(profile)
    }

    pub fn snapshot(&self) -> Vec<PatientSnapshot> {
        let slots: Vec<_> = self.patients.lock().unwrap().values().cloned().collect();
        let mut out: Vec<PatientSnapshot> = slots
            .into_iter()
            .filter_map(|slot| {
                let mut p = slot.lock().unwrap();
                let pid = p.state().patient_id().clone();
                let reg = self.registry.get(&pid)?;
                let severity = self.engine.assess(p.state_mut(), &reg.profile);
                Some(PatientSnapshot {
                    severity,
                    policy: reg.policy,
                    active_alarms: p.state().active_alarms().cloned().collect(),
                    flags: p.flags().iter().filter(|f| f.is_open()).map(FlagRecord::from).collect(),
                    pid,
                })
            })
            .collect();
        out.sort_by(|a, b| a.pid.cmp(&b.pid));
        out
    }

    /// Forgets ledger entries past retention.
    pub fn prune(&self) {
        self.ledger.lock().unwrap().prune(self.data_clock_ms());
    }
}

/// Sessions opened by one ingest connection. Dropping it closes them.
pub struct IngestConn {
    hub: Arc<Hub>,
    sessions: HashMap<(PatientId, DeviceId), Arc<Mutex<Session>>>,
}

impl IngestConn {
    pub fn new(hub: Arc<Hub>) -> Self {
        Self {
            hub,
            sessions: HashMap::new(),
        }
    }

    /// Handles one record line and returns its ack.
    pub fn submit(&mut self, line: &[u8]) -> AckLine {
        let hub = &self.hub;
        hub.counters.submitted.fetch_add(1, Ordering::Relaxed);
        let reject = |code: String| {
            hub.counters.rejected.fetch_add(1, Ordering::Relaxed);
            AckLine::rejected(code)
        };
        let now = now_ms();
        let dp = match parse_record(line) {
            Ok(dp) => dp,
            Err(e) => return reject(SubmitError::from(e).code()),
        };
        let key = (dp.patient_id.clone(), dp.device_id.clone());
        let session = match self.sessions.get(&key) {
            Some(s) => s.clone(),
            None => match hub.gateway.open_session(&key.0, &key.1, now) {
                Ok(s) => {
                    let id = s.session_id();
                    let s = Arc::new(Mutex::new(s));
                    hub.sessions.lock().unwrap().insert(id, s.clone());
                    self.sessions.insert(key, s.clone());
                    s
                }
                Err(e) => return reject(e.code().to_string()),
            },
        };
        let accepted = session.lock().unwrap().accept(dp, now);
        match accepted {
            Ok(a) => {
                hub.counters.accepted.fetch_add(1, Ordering::Relaxed);
                let ts = a.ack_ts();
                hub.forward(a);
                AckLine::accepted(ts)
            }
            Err(e) => {
                if matches!(e, SubmitError::StaleTimestamp { .. }) {
                    hub.counters.stale.fetch_add(1, Ordering::Relaxed);
                }
                reject(e.code())
            }
        }
    }
}

impl Drop for IngestConn {
    fn drop(&mut self) {
        let mut open = self.hub.sessions.lock().unwrap();
        for s in self.sessions.values() {
            open.remove(&s.lock().unwrap().session_id());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rpm_core::domain::{DeviceMeta, VitalsSample};
    use rpm_core::wire::encode_record;
    use rpm_core::DataPoint;

    fn line(pid: &str, ts: i64, spo2: f64) -> Vec<u8> {
        encode_record(&DataPoint {
            patient_id: pid.into(),
            device_id: "ox".into(),
            timestamp_ms: ts,
            vitals: VitalsSample {
                spo2_percent: Some(spo2),
                heart_rate_bpm: Some(70.0 + (ts / 1000 % 5) as f64),
                ..Default::default()
            },
            device_meta: DeviceMeta::default(),
        })
        .into_bytes()
    }

    #[test]
    fn submit_acks_and_rejects() {
        let hub = Arc::new(Hub::new(Config::default()).unwrap());
        let mut conn = IngestConn::new(hub.clone());
        assert_eq!(conn.submit(&line("p1", 1000, 97.0)), AckLine::accepted(1000));
        assert_eq!(conn.submit(&line("p1", 500, 97.0)), AckLine::rejected("stale_timestamp"));
        assert_eq!(conn.submit(b"{"), AckLine::rejected("parse_error"));
        assert_eq!(
            hub.ingest_stats(),
            IngestStats {
                submitted: 3,
                accepted: 1,
                rejected: 2,
                stale: 1
            }
        );
        // a second connection cannot take over the open session
        let mut other = IngestConn::new(hub.clone());
        assert_eq!(other.submit(&line("p1", 2000, 97.0)), AckLine::rejected("duplicate_session"));
        drop(conn);
        assert_eq!(other.submit(&line("p1", 2000, 97.0)), AckLine::accepted(2000));
    }

    #[test]
    fn unknown_patient_without_auto_register() {
        let cfg = Config {
            auto_register: false,
            ..Config::default()
        };
        let hub = Arc::new(Hub::new(cfg).unwrap());
        let mut conn = IngestConn::new(hub);
        assert_eq!(conn.submit(&line("px", 1000, 97.0)), AckLine::rejected("unknown_patient"));
    }

    #[test]
    fn alarm_reaches_queue_ledger_and_ack() {
        let hub = Arc::new(Hub::new(Config::default()).unwrap());
        let mut rx = hub.router().claim("oncall").unwrap();
        let mut conn = IngestConn::new(hub.clone());
        for k in 0..=60 {
            assert!(conn.submit(&line("p1", 1_000 + k * 1000, 89.0)).is_ok());
        }
        let n = rx.try_recv().expect("one notification");
        let TopicEvent::Transition(t) = &n.event else { panic!("expected alarm") };
        assert_eq!(t.rule, "spo2_persistent_low");
        assert!(hub.justify(&t.alarm_id).unwrap().covers_evidence());
        assert_eq!(hub.acknowledge(&t.alarm_id, "oncall").unwrap().acknowledged_by.as_deref(), Some("oncall"));
        assert!(matches!(
            hub.acknowledge(&t.alarm_id, "oncall"),
            Err(AckError::AlreadyAcknowledged { .. })
        ));
        let snap = hub.snapshot();
        assert_eq!(snap[0].severity, SeverityClass::HighSeverity);
        assert_eq!(snap[0].active_alarms[0].state, rpm_core::AlarmState::Acknowledged);
    }

    #[test]
    fn quiet_session_opens_gap_flag() {
        let hub = Arc::new(Hub::new(Config::default()).unwrap());
        let mut rx = hub.router().claim("oncall").unwrap();
        let mut conn = IngestConn::new(hub.clone());
        assert!(conn.submit(&line("p1", 1000, 97.0)).is_ok());
        hub.tick(20_000);
        assert!(rx.try_recv().is_err());
        hub.tick(31_000);
        let n = rx.try_recv().unwrap();
        assert!(matches!(n.event, TopicEvent::Flag(FlagRecord { from: 2000, to: None, .. })));
        assert!(conn.submit(&line("p1", 40_000, 97.0)).is_ok());
        let closed = rx.try_recv().unwrap();
        assert!(matches!(closed.event, TopicEvent::Flag(FlagRecord { to: Some(40_000), .. })));
    }
}
