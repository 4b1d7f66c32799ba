//! In-memory patient profile registry with resolved policies.

use std::collections::HashMap;
use std::sync::RwLock;

use thiserror::Error;

use crate::domain::{resolve_policy, AlarmPolicy, PatientId, PatientProfile, PolicyError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverrideError {
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone)]
pub struct RegisteredPatient {
    pub profile: PatientProfile,
    pub policy: AlarmPolicy,
}

/// Profiles keyed by patient. Unknown patients are refused unless
/// `auto_register` is set, in which case they get a bare profile and the
/// default policy.
#[derive(Debug)]
pub struct ProfileRegistry {
    defaults: AlarmPolicy,
    auto_register: bool,
    patients: RwLock<HashMap<PatientId, RegisteredPatient>>,
}

impl ProfileRegistry {
    pub fn new(defaults: AlarmPolicy, auto_register: bool) -> Self {
        Self {
            defaults,
            auto_register,
            patients: RwLock::new(HashMap::new()),
        }
    }

    pub fn defaults(&self) -> &AlarmPolicy {
        &self.defaults
    }

    pub fn register(&self, profile: PatientProfile) -> Result<AlarmPolicy, PolicyError> {
        let policy = resolve_policy(&profile, &self.defaults)?;
        self.patients.write().unwrap().insert(
            profile.patient_id.clone(),
            RegisteredPatient {
                profile,
                policy: policy.clone(),
            },
        );
        Ok(policy)
    }

    pub fn get(&self, id: &PatientId) -> Option<RegisteredPatient> {
        self.patients.read().unwrap().get(id).cloned()
    }

    /// Looks a patient up, registering a bare profile when allowed.
    pub fn lookup(&self, id: &PatientId) -> Option<RegisteredPatient> {
        if let Some(p) = self.get(id) {
            return Some(p);
        }
        if !self.auto_register {
            return None;
        }
        let profile = PatientProfile::new(id.clone(), 0);
        let mut guard = self.patients.write().unwrap();
        let entry = guard.entry(id.clone()).or_insert_with(|| RegisteredPatient {
            profile,
            policy: self.defaults.clone(),
        });
        Some(entry.clone())
    }

    /// Applies one override edit and returns the new effective policy. The
    /// registry is untouched when the edit is invalid.
    pub fn set_override(
        &self,
        id: &PatientId,
        field: &str,
        value: serde_json::Value,
    ) -> Result<AlarmPolicy, OverrideError> {
        let mut guard = self.patients.write().unwrap();
        let entry = guard
            .get_mut(id)
            .ok_or_else(|| OverrideError::UnknownPatient(id.clone()))?;
        let mut profile = entry.profile.clone();
        profile.policy_overrides.set_field(field, value)?;
        let policy = resolve_policy(&profile, &self.defaults)?;
        entry.profile = profile;
        entry.policy = policy.clone();
        Ok(policy)
    }

    pub fn len(&self) -> usize {
        self.patients.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_edit_resolves_and_rejects() {
        let r = ProfileRegistry::new(AlarmPolicy::default(), false);
        r.register(PatientProfile::new("p1", 60)).unwrap();
        let p = r
            .set_override(&"p1".into(), "spo2_low_threshold_percent", serde_json::json!(95))
            .unwrap();
        assert_eq!(p.spo2_low_threshold_percent, 95.0);
        assert!(r
            .set_override(&"p1".into(), "spo2_persistence_window_s", serde_json::json!(0))
            .is_err());
        assert_eq!(r.get(&"p1".into()).unwrap().policy.spo2_persistence_window_s, 60);
    }

    #[test]
    fn auto_register_only_when_enabled() {
        let strict = ProfileRegistry::new(AlarmPolicy::default(), false);
        assert!(strict.lookup(&"x".into()).is_none());
        let open = ProfileRegistry::new(AlarmPolicy::default(), true);
        assert!(open.lookup(&"x".into()).is_some());
        assert_eq!(open.len(), 1);
    }
}
