use thiserror::Error;

use super::types::{Channel, DataPoint};

/// First violated data-point invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("value out of range: {0}")]
    RangeViolation(&'static str),
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("no vitals present")]
    EmptyVitals,
}

impl ValidationError {
    pub fn code(&self) -> String {
        match self {
            ValidationError::RangeViolation(f) => format!("range_violation:{f}"),
            ValidationError::MissingField(f) => format!("missing_field:{f}"),
            ValidationError::EmptyVitals => "empty_vitals".into(),
        }
    }
}

/// Open/closed bounds of the physiologically representable range per channel.
fn in_range(channel: Channel, v: f64) -> bool {
    if !v.is_finite() {
        return false;
    }
    match channel {
        Channel::Spo2 => (0.0..=100.0).contains(&v),
        Channel::Hr => v > 0.0 && v < 300.0,
        Channel::Rr => v > 0.0 && v < 120.0,
        Channel::Sys | Channel::Dia => v > 0.0,
        Channel::Temp => true,
    }
}

/// Accepts a data-point iff every type invariant holds.
///
/// Checks run in a fixed order so the reported violation is deterministic:
/// identifiers, timestamp, vitals presence, per-channel ranges, blood-pressure
/// ordering, then device metadata.
pub fn validate_datapoint(dp: &DataPoint) -> Result<&DataPoint, ValidationError> {
    if dp.patient_id.is_empty() {
        return Err(ValidationError::MissingField("patient_id"));
    }
    if dp.device_id.is_empty() {
        return Err(ValidationError::MissingField("device_id"));
    }
    if dp.timestamp_ms <= 0 {
        return Err(ValidationError::RangeViolation("timestamp_ms"));
    }
    if dp.vitals.is_empty() {
        return Err(ValidationError::EmptyVitals);
    }
    for (channel, v) in dp.vitals.present() {
        if !in_range(channel, v) {
            return Err(ValidationError::RangeViolation(channel.field_name()));
        }
    }
    if let (Some(s), Some(d)) = (dp.vitals.systolic_mmhg, dp.vitals.diastolic_mmhg) {
        if s <= d {
            return Err(ValidationError::RangeViolation("systolic_mmhg"));
        }
    }
    if let Some(b) = dp.device_meta.battery_percent {
        if !(b.is_finite() && (0.0..=100.0).contains(&b)) {
            return Err(ValidationError::RangeViolation("battery_percent"));
        }
    }
    Ok(dp)
}
