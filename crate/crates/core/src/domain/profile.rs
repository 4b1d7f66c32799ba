use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::policy::PolicyOverrides;
use super::types::PatientId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comorbidity {
    Hypertension,
    Diabetes,
    Copd,
    CardiacDisease,
    CancerHistory,
    Smoker,
    AnxietyDisorder,
}

/// Lab values that are not streamed. Consulted only when classifying severity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabMarkers {
    /// Ratio against the patient's baseline D-dimer value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_dimer_fold_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub patient_id: PatientId,
    pub age_years: u32,
    #[serde(default)]
    pub comorbidities: BTreeSet<Comorbidity>,
    #[serde(default)]
    pub lab_markers: LabMarkers,
    #[serde(default)]
    pub policy_overrides: PolicyOverrides,
    #[serde(default)]
    pub pcp_contact: String,
    #[serde(default)]
    pub notes: String,
}

impl PatientProfile {
    pub fn new(patient_id: impl Into<PatientId>, age_years: u32) -> Self {
        Self {
            patient_id: patient_id.into(),
            age_years,
            comorbidities: BTreeSet::new(),
            lab_markers: LabMarkers::default(),
            policy_overrides: PolicyOverrides::default(),
            pcp_contact: String::new(),
            notes: String::new(),
        }
    }

    /// Checks the profile's own invariants (the override values are checked
    /// by policy resolution).
    pub fn check(&self) -> Result<(), String> {
        if self.patient_id.is_empty() {
            return Err("patient_id".into());
        }
        if let Some(d) = self.lab_markers.d_dimer_fold_increase {
            if !(d.is_finite() && d >= 0.0) {
                return Err("d_dimer_fold_increase".into());
            }
        }
        Ok(())
    }

    /// Same profile under a different identifier. Used when one scripted
    /// profile is instantiated for many simulated patients.
    pub fn with_patient_id(&self, patient_id: impl Into<PatientId>) -> Self {
        Self {
            patient_id: patient_id.into(),
            ..self.clone()
        }
    }
}
