//! Core of the remote patient monitoring engine.
//!
//! Data-points arrive once per second per patient through [`ingest`], are
//! screened by [`integrity`] for device faults and non-compliance, and are
//! evaluated by the windowed rules in [`engine`]. Resulting alarm transitions
//! are routed to recipients by [`notify`]. [`sim`] produces labeled synthetic
//! streams and [`eval`] replays and scores them.

pub mod config;
pub mod domain;
pub mod engine;
pub mod eval;
pub mod ingest;
pub mod integrity;
pub mod notify;
pub mod pipeline;
pub mod registry;
pub mod sim;
pub mod wire;

pub use domain::{
    AlarmEvent, AlarmPolicy, AlarmState, Channel, DataPoint, DeviceId, DeviceMeta, FlagKind,
    IntegrityFlag, PatientId, PatientProfile, PolicyOverrides, Severity, SeverityClass,
    VitalsSample,
};
