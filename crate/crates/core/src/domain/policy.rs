use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::profile::PatientProfile;

/// Resolved alarm thresholds for one patient.
///
/// Key names double as the configuration-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlarmPolicy {
    pub spo2_low_threshold_percent: f64,
    pub spo2_persistence_window_s: u32,
    pub spo2_min_coverage_fraction: f64,
    pub hr_high_threshold_bpm: f64,
    pub hr_persistence_window_s: u32,
    pub rr_normal_range_bpm: [f64; 2],
    /// Breaths/min per minute over the trend window.
    pub rr_trend_slope_threshold: f64,
    pub rr_trend_window_s: u32,
    pub transient_min_duration_s: u32,
    pub transient_return_window_s: u32,
}

impl Default for AlarmPolicy {
    fn default() -> Self {
        Self {
            spo2_low_threshold_percent: 92.0,
            spo2_persistence_window_s: 60,
            spo2_min_coverage_fraction: 0.8,
            hr_high_threshold_bpm: 100.0,
            hr_persistence_window_s: 120,
            rr_normal_range_bpm: [12.0, 20.0],
            rr_trend_slope_threshold: 0.5,
            rr_trend_window_s: 600,
            transient_min_duration_s: 120,
            transient_return_window_s: 900,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("invalid override for {field}: {reason}")]
    InvalidOverride { field: String, reason: String },
    #[error("invalid policy field {field}: {reason}")]
    InvalidPolicy { field: String, reason: String },
    #[error("unknown policy field {0}")]
    UnknownField(String),
}

const MIN_WINDOW_S: u32 = 10;
const MIN_TREND_WINDOW_S: u32 = 60;

impl AlarmPolicy {
    /// Returns the name of the first violated invariant and why.
    fn first_violation(&self) -> Option<(&'static str, String)> {
        let positive = [
            ("spo2_low_threshold_percent", self.spo2_low_threshold_percent),
            ("hr_high_threshold_bpm", self.hr_high_threshold_bpm),
            ("rr_trend_slope_threshold", self.rr_trend_slope_threshold),
            ("rr_normal_range_bpm", self.rr_normal_range_bpm[0]),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Some((field, format!("must be positive, got {v}")));
            }
        }
        if self.spo2_low_threshold_percent > 100.0 {
            return Some(("spo2_low_threshold_percent", "must not exceed 100".into()));
        }
        let [lo, hi] = self.rr_normal_range_bpm;
        if !(hi.is_finite() && hi > lo) {
            return Some(("rr_normal_range_bpm", format!("upper bound {hi} must exceed {lo}")));
        }
        let windows = [
            ("spo2_persistence_window_s", self.spo2_persistence_window_s),
            ("hr_persistence_window_s", self.hr_persistence_window_s),
            ("rr_trend_window_s", self.rr_trend_window_s),
            ("transient_min_duration_s", self.transient_min_duration_s),
            ("transient_return_window_s", self.transient_return_window_s),
        ];
        for (field, w) in windows {
            if w < MIN_WINDOW_S {
                return Some((field, format!("window must be at least {MIN_WINDOW_S} s, got {w}")));
            }
        }
        if self.rr_trend_window_s < MIN_TREND_WINDOW_S {
            return Some((
                "rr_trend_window_s",
                format!("trend window must be at least {MIN_TREND_WINDOW_S} s"),
            ));
        }
        if self.transient_return_window_s < self.transient_min_duration_s {
            return Some((
                "transient_return_window_s",
                "must not be shorter than transient_min_duration_s".into(),
            ));
        }
        let c = self.spo2_min_coverage_fraction;
        if !(c > 0.0 && c <= 1.0) {
            return Some(("spo2_min_coverage_fraction", format!("must lie in (0,1], got {c}")));
        }
        None
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self.first_violation() {
            None => Ok(()),
            Some((field, reason)) => Err(PolicyError::InvalidPolicy {
                field: field.into(),
                reason,
            }),
        }
    }

    pub fn rr_normal_low(&self) -> f64 {
        self.rr_normal_range_bpm[0]
    }

    pub fn rr_normal_high(&self) -> f64 {
        self.rr_normal_range_bpm[1]
    }
}

/// Partial policy carried by a patient profile. Every present field replaces
/// the corresponding default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spo2_low_threshold_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spo2_persistence_window_s: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spo2_min_coverage_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_high_threshold_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_persistence_window_s: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr_normal_range_bpm: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr_trend_slope_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr_trend_window_s: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_min_duration_s: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_return_window_s: Option<u32>,
}

impl PolicyOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// Sets one override by its key name, the way a console edit arrives.
    pub fn set_field(&mut self, field: &str, value: serde_json::Value) -> Result<(), PolicyError> {
        let mut map = match serde_json::to_value(&*self) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => serde_json::Map::new(),
        };
        if !AlarmPolicy::FIELDS.contains(&field) {
            return Err(PolicyError::UnknownField(field.into()));
        }
        map.insert(field.into(), value);
        *self = serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| {
            PolicyError::InvalidOverride {
                field: field.into(),
                reason: e.to_string(),
            }
        })?;
        Ok(())
    }

    fn apply(&self, base: &mut AlarmPolicy) {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { base.$f = v; } )* };
        }
        take!(
            spo2_low_threshold_percent,
            spo2_persistence_window_s,
            spo2_min_coverage_fraction,
            hr_high_threshold_bpm,
            hr_persistence_window_s,
            rr_normal_range_bpm,
            rr_trend_slope_threshold,
            rr_trend_window_s,
            transient_min_duration_s,
            transient_return_window_s
        );
    }
}

impl AlarmPolicy {
    pub const FIELDS: [&'static str; 10] = [
        "spo2_low_threshold_percent",
        "spo2_persistence_window_s",
        "spo2_min_coverage_fraction",
        "hr_high_threshold_bpm",
        "hr_persistence_window_s",
        "rr_normal_range_bpm",
        "rr_trend_slope_threshold",
        "rr_trend_window_s",
        "transient_min_duration_s",
        "transient_return_window_s",
    ];
}

/// Merges a profile's overrides onto the defaults.
pub fn resolve_policy(
    profile: &PatientProfile,
    defaults: &AlarmPolicy,
) -> Result<AlarmPolicy, PolicyError> {
    defaults.validate()?;
    let mut policy = defaults.clone();
    profile.policy_overrides.apply(&mut policy);
    match policy.first_violation() {
        None => Ok(policy),
        Some((field, reason)) => Err(PolicyError::InvalidOverride {
            field: field.into(),
            reason,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile_with(o: PolicyOverrides) -> PatientProfile {
        let mut p = PatientProfile::new("p1", 60);
        p.policy_overrides = o;
        p
    }

    #[test]
    fn override_replaces_only_named_field() {
        let p = profile_with(PolicyOverrides {
            spo2_low_threshold_percent: Some(95.0),
            ..Default::default()
        });
        let d = AlarmPolicy::default();
        let r = resolve_policy(&p, &d).unwrap();
        assert_eq!(r.spo2_low_threshold_percent, 95.0);
        assert_eq!(
            AlarmPolicy {
                spo2_low_threshold_percent: 92.0,
                ..r
            },
            d
        );
    }

    #[test]
    fn empty_overrides_is_identity() {
        let d = AlarmPolicy::default();
        assert_eq!(resolve_policy(&profile_with(Default::default()), &d).unwrap(), d);
    }

    #[test]
    fn zero_window_is_rejected() {
        let p = profile_with(PolicyOverrides {
            spo2_persistence_window_s: Some(0),
            ..Default::default()
        });
        let err = resolve_policy(&p, &AlarmPolicy::default()).unwrap_err();
        assert!(matches!(err, PolicyError::InvalidOverride { ref field, .. } if field == "spo2_persistence_window_s"));
    }

    #[test]
    fn non_positive_threshold_and_bad_coverage_rejected() {
        for o in [
            PolicyOverrides {
                hr_high_threshold_bpm: Some(0.0),
                ..Default::default()
            },
            PolicyOverrides {
                spo2_min_coverage_fraction: Some(1.5),
                ..Default::default()
            },
            PolicyOverrides {
                rr_normal_range_bpm: Some([20.0, 12.0]),
                ..Default::default()
            },
        ] {
            assert!(resolve_policy(&profile_with(o), &AlarmPolicy::default()).is_err());
        }
    }

    #[test]
    fn set_field_by_name() {
        let mut o = PolicyOverrides::default();
        o.set_field("spo2_low_threshold_percent", serde_json::json!(95)).unwrap();
        assert_eq!(o.spo2_low_threshold_percent, Some(95.0));
        assert!(matches!(
            o.set_field("nope", serde_json::json!(1)),
            Err(PolicyError::UnknownField(_))
        ));
        assert!(o.set_field("rr_trend_window_s", serde_json::json!("x")).is_err());
    }
}
