//! Connection preamble and console command lines.
//!
//! Every connection may open with `{"auth":"<token>"}`; it is required when
//! the server has a token. Consumers also name themselves:
//! `{"auth":"<token>","recipient":"<id>"}`.

use rpm_core::{PatientId, PatientProfile};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preamble {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipient: Option<String>,
}

impl Preamble {
    pub fn parse(line: &[u8]) -> Option<Self> {
        serde_json::from_slice(trim_line(line)).ok()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("preamble serializes")
    }
}

pub fn trim_line(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetOverride {
        pid: PatientId,
        field: String,
        value: Value,
    },
    /// Recipient defaults to the consumer connection's own.
    Ack {
        alarm_id: String,
        #[serde(default)]
        recipient: Option<String>,
    },
    Justify {
        alarm_id: String,
    },
    Snapshot {},
    Register {
        profile: PatientProfile,
    },
    Stats {
        #[serde(default)]
        recipient: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetOverride { .. } => "set_override",
            Command::Ack { .. } => "ack",
            Command::Justify { .. } => "justify",
            Command::Snapshot {} => "snapshot",
            Command::Register { .. } => "register",
            Command::Stats { .. } => "stats",
        }
    }
}

/// `{"ok":true,"cmd":..}` merged with `body`'s keys.
pub fn reply_ok(cmd: &str, body: Value) -> String {
    let mut v = json!({"ok": true, "cmd": cmd});
    if let (Value::Object(dst), Value::Object(src)) = (&mut v, body) {
        dst.extend(src);
    }
    v.to_string()
}

pub fn reply_err(cmd: &str, code: &str, detail: impl std::fmt::Display) -> String {
    json!({"ok": false, "cmd": cmd, "err": code, "detail": detail.to_string()}).to_string()
}
