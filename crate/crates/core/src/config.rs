//! TOML configuration shared by the server and the offline tools.
//!
//! Policy keys sit at the top level next to the network keys; rule-engine and
//! integrity tunables live in optional `[engine]` and `[integrity]` tables.
//!
//! ```toml
//! listen_ingest = "127.0.0.1:7400"
//! auth_token = "secret"
//! spo2_low_threshold_percent = 92
//!
//! [[subscription]]
//! recipient_id = "er-desk"
//! role = "ER_Physician"
//! patients = "ALL"
//! min_severity = "high"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AlarmPolicy, PatientProfile, PolicyError, Severity};
use crate::engine::EngineConfig;
use crate::ingest::DEFAULT_GAP_THRESHOLD_S;
use crate::integrity::IntegrityConfig;
use crate::notify::{PatientFilter, Role, Subscription, DEFAULT_LOOKBACK_S};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: invalid {field}: {reason}")]
    Invalid {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("profiles file {path}: {message}")]
    Profiles { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    listen_ingest: Option<String>,
    listen_consumer: Option<String>,
    listen_console: Option<String>,
    auth_token: Option<String>,
    auto_register: Option<bool>,
    profiles_path: Option<PathBuf>,
    retention_s: Option<u32>,
    lookback_s: Option<u32>,
    masking: Option<bool>,
    gap_threshold_s: Option<u32>,

    spo2_low_threshold_percent: Option<f64>,
    spo2_persistence_window_s: Option<u32>,
    spo2_min_coverage_fraction: Option<f64>,
    hr_high_threshold_bpm: Option<f64>,
    hr_persistence_window_s: Option<u32>,
    rr_normal_range_bpm: Option<[f64; 2]>,
    rr_trend_slope_threshold: Option<f64>,
    rr_trend_window_s: Option<u32>,
    transient_min_duration_s: Option<u32>,
    transient_return_window_s: Option<u32>,

    #[serde(default)]
    engine: EngineConfig,
    #[serde(default)]
    integrity: IntegrityConfig,
    #[serde(default)]
    subscription: Vec<Subscription>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub listen_ingest: String,
    pub listen_consumer: String,
    pub listen_console: String,
    pub auth_token: Option<String>,
    pub auto_register: bool,
    pub profiles_path: Option<PathBuf>,
    /// How long raised alarms stay retrievable for justification.
    pub retention_s: u32,
    /// Vitals history attached to a justification bundle.
    pub lookback_s: u32,
    pub masking: bool,
    pub gap_threshold_s: u32,
    pub policy: AlarmPolicy,
    pub engine: EngineConfig,
    pub integrity: IntegrityConfig,
    pub subscriptions: Vec<Subscription>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            listen_ingest: "127.0.0.1:7400".into(),
            listen_consumer: "127.0.0.1:7401".into(),
            listen_console: "127.0.0.1:7402".into(),
            auth_token: None,
            auto_register: true,
            profiles_path: None,
            retention_s: 3600,
            lookback_s: DEFAULT_LOOKBACK_S,
            masking: true,
            gap_threshold_s: DEFAULT_GAP_THRESHOLD_S,
            policy: AlarmPolicy::default(),
            engine: EngineConfig::default(),
            integrity: IntegrityConfig::default(),
            subscriptions: vec![default_subscription()],
        }
    }
}

/// Used when the file names no subscriptions: one catch-all recipient.
pub fn default_subscription() -> Subscription {
    Subscription {
        recipient_id: "oncall".into(),
        role: Role::Admin,
        patient_filter: PatientFilter::All,
        min_severity: Severity::Advisory,
    }
}

fn line_of(src: &str, key: &str) -> usize {
    src.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map_or(0, |i| i + 1)
}

fn line_at(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

impl Config {
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(src).map_err(|e| ConfigError::Syntax {
            line: e.span().map_or(0, |s| line_at(src, s.start)),
            message: e.message().to_string(),
        })?;
        let d = Config::default();
        let p = AlarmPolicy::default();
        let policy = AlarmPolicy {
            spo2_low_threshold_percent: file.spo2_low_threshold_percent.unwrap_or(p.spo2_low_threshold_percent),
            spo2_persistence_window_s: file.spo2_persistence_window_s.unwrap_or(p.spo2_persistence_window_s),
            spo2_min_coverage_fraction: file.spo2_min_coverage_fraction.unwrap_or(p.spo2_min_coverage_fraction),
            hr_high_threshold_bpm: file.hr_high_threshold_bpm.unwrap_or(p.hr_high_threshold_bpm),
            hr_persistence_window_s: file.hr_persistence_window_s.unwrap_or(p.hr_persistence_window_s),
            rr_normal_range_bpm: file.rr_normal_range_bpm.unwrap_or(p.rr_normal_range_bpm),
            rr_trend_slope_threshold: file.rr_trend_slope_threshold.unwrap_or(p.rr_trend_slope_threshold),
            rr_trend_window_s: file.rr_trend_window_s.unwrap_or(p.rr_trend_window_s),
            transient_min_duration_s: file.transient_min_duration_s.unwrap_or(p.transient_min_duration_s),
            transient_return_window_s: file.transient_return_window_s.unwrap_or(p.transient_return_window_s),
        };
        if let Err(PolicyError::InvalidPolicy { field, reason }) = policy.validate() {
            return Err(ConfigError::Invalid {
                line: line_of(src, &field),
                field,
                reason,
            });
        }
        for s in &file.subscription {
            if let Err(e) = s.check() {
                return Err(ConfigError::Invalid {
                    line: line_of(src, "recipient_id"),
                    field: "subscription.recipient_id".into(),
                    reason: e.to_string(),
                });
            }
        }
        let subscriptions = if file.subscription.is_empty() {
            d.subscriptions
        } else {
            file.subscription
        };
        Ok(Config {
            listen_ingest: file.listen_ingest.unwrap_or(d.listen_ingest),
            listen_consumer: file.listen_consumer.unwrap_or(d.listen_consumer),
            listen_console: file.listen_console.unwrap_or(d.listen_console),
            auth_token: file.auth_token,
            auto_register: file.auto_register.unwrap_or(d.auto_register),
            profiles_path: file.profiles_path,
            retention_s: file.retention_s.unwrap_or(d.retention_s),
            lookback_s: file.lookback_s.unwrap_or(d.lookback_s),
            masking: file.masking.unwrap_or(d.masking),
            gap_threshold_s: file.gap_threshold_s.unwrap_or(d.gap_threshold_s),
            policy,
            engine: file.engine,
            integrity: file.integrity,
            subscriptions,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&src)
    }

    /// Reads the profiles file, if configured: a JSON array of profiles.
    pub fn load_profiles(&self) -> Result<Vec<PatientProfile>, ConfigError> {
        let Some(path) = &self.profiles_path else {
            return Ok(Vec::new());
        };
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        let err = |message: String| ConfigError::Profiles {
            path: path.clone(),
            message,
        };
        let profiles: Vec<PatientProfile> = serde_json::from_str(&raw).map_err(|e| err(e.to_string()))?;
        for p in &profiles {
            p.check().map_err(err)?;
        }
        Ok(profiles)
    }
}
