//! Seeded, labeled 1 Hz vitals streams.

mod cohort;
mod generate;
pub mod library;
mod script;

pub use cohort::{derive_seed, instantiate, parse_mix, run_cohort, CohortMember, UnknownScenario};
pub use generate::{device_for, generate, stream_ts, STREAM_EPOCH_MS};
pub use library::{lookup, scenario_library};
pub use script::{
    ChannelTargets, EventKind, GroundTruth, InvalidScript, Label, NoiseSigmas, ScenarioScript,
    ScriptEvent, Segment, Target,
};
