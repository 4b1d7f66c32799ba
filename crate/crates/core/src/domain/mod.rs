//! Shared domain types, the default alarm policy and policy resolution.

mod alarm;
mod flag;
mod policy;
mod profile;
mod types;
mod validate;

pub use alarm::{AlarmEvent, AlarmState, RuleTraceEntry, Severity, SeverityClass, StateError, TraceOutcome};
pub use flag::{FlagKind, IntegrityFlag};
pub use policy::{resolve_policy, AlarmPolicy, PolicyError, PolicyOverrides};
pub use profile::{Comorbidity, LabMarkers, PatientProfile};
pub use types::{Channel, DataPoint, DeviceId, DeviceMeta, PatientId, VitalsSample};
pub use validate::{validate_datapoint, ValidationError};
