//! Line-oriented JSON schemas shared by the ingest, topic and consumer
//! protocols. Key names here are part of the external contract.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AlarmEvent, AlarmState, Channel, DataPoint, DeviceMeta, FlagKind, IntegrityFlag, Severity,
    VitalsSample,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireVitals {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spo2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sys: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dia: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<bool>,
}

/// One ingest record: `{"pid":..,"did":..,"ts":..,"v":{..},"m":{..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRecord {
    pub pid: String,
    pub did: String,
    pub ts: i64,
    #[serde(default)]
    pub v: WireVitals,
    #[serde(default)]
    pub m: WireMeta,
}

#[derive(Debug, Error)]
#[error("malformed record: {0}")]
pub struct ParseError(pub String);

impl From<WireRecord> for DataPoint {
    fn from(r: WireRecord) -> Self {
        DataPoint {
            patient_id: r.pid.into(),
            device_id: r.did.into(),
            timestamp_ms: r.ts,
            vitals: VitalsSample {
                spo2_percent: r.v.spo2,
                heart_rate_bpm: r.v.hr,
                resp_rate_bpm: r.v.rr,
                systolic_mmhg: r.v.sys,
                diastolic_mmhg: r.v.dia,
                temp_celsius: r.v.temp,
            },
            device_meta: DeviceMeta {
                battery_percent: r.m.batt,
                sensor_contact: r.m.contact,
                motion_flag: r.m.motion,
            },
        }
    }
}

impl From<&DataPoint> for WireRecord {
    fn from(d: &DataPoint) -> Self {
        WireRecord {
            pid: d.patient_id.to_string(),
            did: d.device_id.to_string(),
            ts: d.timestamp_ms,
            v: WireVitals {
                spo2: d.vitals.spo2_percent,
                hr: d.vitals.heart_rate_bpm,
                rr: d.vitals.resp_rate_bpm,
                sys: d.vitals.systolic_mmhg,
                dia: d.vitals.diastolic_mmhg,
                temp: d.vitals.temp_celsius,
            },
            m: WireMeta {
                batt: d.device_meta.battery_percent,
                contact: d.device_meta.sensor_contact,
                motion: d.device_meta.motion_flag,
            },
        }
    }
}

/// Parses one ingest line. A single trailing `\n` (and `\r`) is tolerated.
pub fn parse_record(line: &[u8]) -> Result<DataPoint, ParseError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    serde_json::from_slice::<WireRecord>(line)
        .map(DataPoint::from)
        .map_err(|e| ParseError(e.to_string()))
}

/// Encodes a data-point as one ingest line without the terminator.
pub fn encode_record(dp: &DataPoint) -> String {
    serde_json::to_string(&WireRecord::from(dp)).expect("record serializes")
}

/// Gateway reply to one ingest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AckLine {
    Ok { ok: bool, ts: i64 },
    Err { ok: bool, err: String },
}

impl AckLine {
    pub fn accepted(ts: i64) -> Self {
        AckLine::Ok { ok: true, ts }
    }

    pub fn rejected(code: impl Into<String>) -> Self {
        AckLine::Err {
            ok: false,
            err: code.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, AckLine::Ok { ok: true, .. })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("ack serializes")
    }
}

/// Alarm transition as published on the internal topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub alarm_id: String,
    pub pid: String,
    pub rule: String,
    pub sev: Severity,
    pub state: AlarmState,
    pub ts: i64,
    pub evidence_from: i64,
    pub evidence_to: i64,
}

impl TransitionRecord {
    pub fn from_alarm(alarm: &AlarmEvent, state: AlarmState, ts: i64) -> Self {
        Self {
            alarm_id: alarm.alarm_id.clone(),
            pid: alarm.patient_id.to_string(),
            rule: alarm.rule_id.clone(),
            sev: alarm.severity,
            state,
            ts,
            evidence_from: alarm.evidence_from(),
            evidence_to: alarm.evidence_to(),
        }
    }
}

/// Integrity flag as published on the internal topic. `to` is `null` while
/// the flag is open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub flag: FlagKind,
    pub pid: String,
    pub did: String,
    pub from: i64,
    pub to: Option<i64>,
    pub ch: Vec<Channel>,
}

impl From<&IntegrityFlag> for FlagRecord {
    fn from(f: &IntegrityFlag) -> Self {
        FlagRecord {
            flag: f.kind,
            pid: f.patient_id.to_string(),
            did: f.device_id.to_string(),
            from: f.start_ms,
            to: f.end_ms,
            ch: f.affected_channels.clone(),
        }
    }
}

/// Anything published on the internal topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopicEvent {
    Transition(TransitionRecord),
    Flag(FlagRecord),
}

impl TopicEvent {
    pub fn patient(&self) -> &str {
        match self {
            TopicEvent::Transition(t) => &t.pid,
            TopicEvent::Flag(f) => &f.pid,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("topic event serializes")
    }
}
