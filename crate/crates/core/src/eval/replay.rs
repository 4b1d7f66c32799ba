use std::sync::Arc;

use rayon::prelude::*;

use crate::config::Config;
use crate::domain::{AlarmPolicy, IntegrityFlag};
use crate::engine::{AlarmEngine, EngineConfig};
use crate::ingest::Gateway;
use crate::integrity::IntegrityConfig;
use crate::notify::AlarmLedger;
use crate::pipeline::PatientPipeline;
use crate::registry::ProfileRegistry;
use crate::wire::{FlagRecord, TopicEvent};

use super::corpus::{Corpus, CorpusEntry, CorpusError};
use super::report::ConfusionReport;
use super::score::score;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub policy: AlarmPolicy,
    pub engine: EngineConfig,
    pub integrity: IntegrityConfig,
    pub masking: bool,
    pub gap_threshold_s: u32,
    pub lookback_s: u32,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self::from(&Config::default())
    }
}

impl From<&Config> for ReplayConfig {
    fn from(c: &Config) -> Self {
        Self {
            policy: c.policy.clone(),
            engine: c.engine.clone(),
            integrity: c.integrity.clone(),
            masking: c.masking,
            gap_threshold_s: c.gap_threshold_s,
            lookback_s: c.lookback_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayMode {
    /// One stream after another on the calling thread.
    Sequential,
    /// Streams spread over the rayon pool; output order is unchanged.
    Parallel,
}

/// Topic output of one stream plus the ledger needed for justification.
#[derive(Debug, Clone)]
pub struct StreamReplay {
    pub events: Vec<TopicEvent>,
    pub ledger: AlarmLedger,
}

/// Feeds one stream through gateway session, integrity screening and engine,
/// with the stream's own timestamps as the clock.
pub fn replay_stream(entry: &CorpusEntry, cfg: &ReplayConfig) -> Result<StreamReplay, CorpusError> {
    let corrupt = |m: String| CorpusError::Corrupt(format!("{}: {m}", entry.patient_id()));
    let registry = Arc::new(ProfileRegistry::new(cfg.policy.clone(), false));
    let profile = entry.script.profile.clone();
    let policy = registry
        .register(profile.clone())
        .map_err(|e| corrupt(e.to_string()))?;
    let gateway = Gateway::with_gap_threshold(registry, cfg.gap_threshold_s);
    let engine = AlarmEngine::new(cfg.engine.clone());
    let mut pipeline = PatientPipeline::new(profile.patient_id.clone(), cfg.integrity.clone(), cfg.masking);
    let mut ledger = AlarmLedger::new(u32::MAX, cfg.lookback_s);
    let mut events = Vec::new();
    let Some(first) = entry.points.first() else {
        return Ok(StreamReplay { events, ledger });
    };
    let mut session = gateway
        .open_session(&first.patient_id, &first.device_id, first.timestamp_ms)
        .map_err(|e| corrupt(e.to_string()))?;

    let flag_event = |f: &IntegrityFlag, events: &mut Vec<TopicEvent>, pipeline: &mut PatientPipeline| {
        pipeline.apply_flag(f.clone());
        events.push(TopicEvent::Flag(FlagRecord::from(f)));
    };

    for dp in &entry.points {
        let now = dp.timestamp_ms;
        if let Some(gap) = session.detect_gap(now) {
            flag_event(&gap, &mut events, &mut pipeline);
        }
        let accepted = session
            .accept(dp.clone(), now)
            .map_err(|e| corrupt(e.to_string()))?;
        if let Some(closed) = &accepted.closed_gap {
            flag_event(closed, &mut events, &mut pipeline);
        }
        let out = pipeline
            .step(&engine, accepted.datapoint, &policy)
            .map_err(|e| corrupt(e.to_string()))?;
        for t in &out.transitions {
            ledger.record(t, pipeline.state().window(), &profile);
        }
        events.extend(out.events());
    }
    Ok(StreamReplay { events, ledger })
}

/// Replays every entry and scores the result.
pub fn replay(
    corpus: &Corpus,
    cfg: &ReplayConfig,
    mode: ReplayMode,
) -> Result<(Vec<TopicEvent>, ConfusionReport), CorpusError> {
    let per_stream: Vec<Vec<TopicEvent>> = match mode {
        ReplayMode::Sequential => corpus
            .entries
            .iter()
            .map(|e| replay_stream(e, cfg).map(|r| r.events))
            .collect::<Result<_, _>>()?,
        ReplayMode::Parallel => corpus
            .entries
            .par_iter()
            .map(|e| replay_stream(e, cfg).map(|r| r.events))
            .collect::<Result<_, _>>()?,
    };
    let log: Vec<TopicEvent> = per_stream.into_iter().flatten().collect();
    let report = score(&log, corpus).expect("a replay log only names corpus patients");
    Ok((log, report))
}

/// The alarm log as newline-terminated JSON lines.
pub fn log_to_string(log: &[TopicEvent]) -> String {
    let mut s = String::new();
    for e in log {
        s.push_str(&e.to_line());
        s.push('\n');
    }
    s
}

pub fn parse_log(raw: &str) -> Result<Vec<TopicEvent>, CorpusError> {
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Corrupt(format!("log line {}: {e}", i + 1)))
        })
        .collect()
}
