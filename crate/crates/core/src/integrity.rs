//! Device-fault and non-compliance classification, and the masking step that
//! keeps compromised evidence from raising high-severity alarms.
//!
//! Detection is incremental: [`IntegrityMonitor`] consumes one data-point at a
//! time and reports flag openings and closings. [`assess_device`] and
//! [`detect_noncompliance`] replay a whole window through a fresh monitor.
//!
//! Flags are half-open intervals `[start_ms, end_ms)`. A flag starts at the
//! first sample of the qualifying run (it is back-dated once the run
//! qualifies) and ends at the first sample that breaks the run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    AlarmEvent, Channel, DataPoint, DeviceId, FlagKind, IntegrityFlag, PatientId, RuleTraceEntry,
    Severity, TraceOutcome,
};
use crate::engine::rule_ids;
use crate::engine::rules::Sign;

/// Run-length and plausibility constants. All tunable from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrityConfig {
    pub low_battery_percent: f64,
    pub stuck_run_samples: usize,
    pub out_of_range_run_samples: usize,
    pub contact_loss_run_samples: usize,
    pub activity_min_duration_s: u32,
    pub activity_hr_above_bpm: f64,
    pub activity_rr_above_bpm: f64,
    pub plausible_spo2: [f64; 2],
    pub plausible_hr: [f64; 2],
    pub plausible_rr: [f64; 2],
}

impl Default for IntegrityConfig {
    fn default() -> Self {
        Self {
            low_battery_percent: 10.0,
            stuck_run_samples: 120,
            out_of_range_run_samples: 5,
            contact_loss_run_samples: 10,
            activity_min_duration_s: 60,
            activity_hr_above_bpm: 100.0,
            activity_rr_above_bpm: 20.0,
            plausible_spo2: [50.0, 100.0],
            plausible_hr: [20.0, 250.0],
            plausible_rr: [4.0, 80.0],
        }
    }
}

impl IntegrityConfig {
    /// SpO2 bounds are inclusive, heart and respiratory rate bounds exclusive.
    fn plausible(&self, channel: Channel, v: f64) -> bool {
        match channel {
            Channel::Spo2 => v >= self.plausible_spo2[0] && v <= self.plausible_spo2[1],
            Channel::Hr => v > self.plausible_hr[0] && v < self.plausible_hr[1],
            Channel::Rr => v > self.plausible_rr[0] && v < self.plausible_rr[1],
            _ => true,
        }
    }

    fn sensor_removed(&self, dp: &DataPoint) -> bool {
        let v = &dp.vitals;
        dp.device_meta.sensor_contact == Some(false)
            || [Channel::Spo2, Channel::Hr, Channel::Rr, Channel::Sys, Channel::Dia]
                .iter()
                .all(|c| v.get(*c).is_none())
    }

    fn activity(&self, dp: &DataPoint) -> bool {
        dp.device_meta.motion_flag == Some(true)
            && dp.vitals.heart_rate_bpm.is_some_and(|h| h > self.activity_hr_above_bpm)
            && dp.vitals.resp_rate_bpm.is_some_and(|r| r > self.activity_rr_above_bpm)
    }
}

/// A change in the set of flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlagUpdate {
    Opened(IntegrityFlag),
    Closed(IntegrityFlag),
    /// A closed flag extended because a new qualifying run started exactly
    /// where it ended. Carries the flag with `end_ms` cleared.
    Reopened(IntegrityFlag),
}

impl FlagUpdate {
    pub fn flag(&self) -> &IntegrityFlag {
        match self {
            FlagUpdate::Opened(f) | FlagUpdate::Closed(f) | FlagUpdate::Reopened(f) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Qualify {
    Samples(usize),
    DurationMs(i64),
}

/// Tracks one run of consecutive samples. `key` is set for runs that must
/// also repeat the same value bit-for-bit.
#[derive(Debug, Clone)]
struct RunTracker {
    kind: FlagKind,
    channels: Vec<Channel>,
    qualify: Qualify,
    start: Option<i64>,
    count: usize,
    key: Option<u64>,
    open: Option<IntegrityFlag>,
    last_closed: Option<IntegrityFlag>,
}

impl RunTracker {
    fn new(kind: FlagKind, channels: Vec<Channel>, qualify: Qualify) -> Self {
        Self {
            kind,
            channels,
            qualify,
            start: None,
            count: 0,
            key: None,
            open: None,
            last_closed: None,
        }
    }

    fn break_run(&mut self, ts: i64, out: &mut Vec<FlagUpdate>) {
        if let Some(mut f) = self.open.take() {
            f.end_ms = Some(ts);
            self.last_closed = Some(f.clone());
            out.push(FlagUpdate::Closed(f));
        }
        self.start = None;
        self.count = 0;
        self.key = None;
    }

    fn extend(&mut self, ts: i64, pid: &PatientId, did: &DeviceId, out: &mut Vec<FlagUpdate>) {
        let start = *self.start.get_or_insert(ts);
        self.count += 1;
        if self.open.is_some() {
            return;
        }
        let qualifies = match self.qualify {
            Qualify::Samples(n) => self.count >= n,
            Qualify::DurationMs(d) => ts - start >= d,
        };
        if !qualifies {
            return;
        }
        match self.last_closed.take() {
            Some(mut prev) if prev.end_ms == Some(start) => {
                prev.end_ms = None;
                self.open = Some(prev.clone());
                out.push(FlagUpdate::Reopened(prev));
            }
            _ => {
                let f = IntegrityFlag {
                    patient_id: pid.clone(),
                    device_id: did.clone(),
                    kind: self.kind,
                    start_ms: start,
                    end_ms: None,
                    affected_channels: self.channels.clone(),
                };
                self.open = Some(f.clone());
                out.push(FlagUpdate::Opened(f));
            }
        }
    }

    fn observe(&mut self, holds: bool, ts: i64, pid: &PatientId, did: &DeviceId, out: &mut Vec<FlagUpdate>) {
        if holds {
            self.extend(ts, pid, did, out);
        } else {
            self.break_run(ts, out);
        }
    }

    /// Stuck-value variant: the run continues only while the value repeats.
    fn observe_value(&mut self, value: Option<f64>, ts: i64, pid: &PatientId, did: &DeviceId, out: &mut Vec<FlagUpdate>) {
        match value {
            None => self.break_run(ts, out),
            Some(v) => {
                let bits = v.to_bits();
                if self.key != Some(bits) {
                    self.break_run(ts, out);
                    self.key = Some(bits);
                }
                self.extend(ts, pid, did, out);
            }
        }
    }
}

#[derive(Debug, Clone)]
struct DeviceTrackers {
    low_battery: RunTracker,
    stuck: Vec<(Channel, RunTracker)>,
    out_of_range: Vec<(Channel, RunTracker)>,
    removed: RunTracker,
    activity: RunTracker,
}

impl DeviceTrackers {
    fn new(cfg: &IntegrityConfig) -> Self {
        let all = Channel::ALL.to_vec();
        Self {
            low_battery: RunTracker::new(FlagKind::LowBattery, all.clone(), Qualify::Samples(1)),
            stuck: Channel::ALL
                .iter()
                .map(|&c| {
                    (c, RunTracker::new(FlagKind::StuckValue, vec![c], Qualify::Samples(cfg.stuck_run_samples)))
                })
                .collect(),
            out_of_range: [Channel::Spo2, Channel::Hr, Channel::Rr]
                .iter()
                .map(|&c| {
                    (
                        c,
                        RunTracker::new(FlagKind::OutOfRange, vec![c], Qualify::Samples(cfg.out_of_range_run_samples)),
                    )
                })
                .collect(),
            removed: RunTracker::new(
                FlagKind::SensorRemoved,
                all,
                Qualify::Samples(cfg.contact_loss_run_samples),
            ),
            activity: RunTracker::new(
                FlagKind::ActivityArtifact,
                vec![Channel::Hr, Channel::Rr],
                Qualify::DurationMs(i64::from(cfg.activity_min_duration_s) * 1000),
            ),
        }
    }

    fn trackers(&self) -> impl Iterator<Item = &RunTracker> {
        std::iter::once(&self.low_battery)
            .chain(self.stuck.iter().map(|(_, t)| t))
            .chain(self.out_of_range.iter().map(|(_, t)| t))
            .chain([&self.removed, &self.activity])
    }
}

/// Incremental fault and non-compliance detector for one patient's devices.
#[derive(Debug, Clone)]
pub struct IntegrityMonitor {
    cfg: IntegrityConfig,
    devices: BTreeMap<DeviceId, DeviceTrackers>,
}

impl IntegrityMonitor {
    pub fn new(cfg: IntegrityConfig) -> Self {
        Self {
            cfg,
            devices: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &IntegrityConfig {
        &self.cfg
    }

    /// Feeds one data-point (in timestamp order per device) and returns the
    /// flag changes it causes.
    pub fn observe(&mut self, dp: &DataPoint) -> Vec<FlagUpdate> {
        let cfg = &self.cfg;
        let t = self
            .devices
            .entry(dp.device_id.clone())
            .or_insert_with(|| DeviceTrackers::new(cfg));
        let (ts, pid, did) = (dp.timestamp_ms, &dp.patient_id, &dp.device_id);
        let mut out = Vec::new();
        let low = dp
            .device_meta
            .battery_percent
            .is_some_and(|b| b < cfg.low_battery_percent);
        t.low_battery.observe(low, ts, pid, did, &mut out);
        for (c, tr) in &mut t.stuck {
            tr.observe_value(dp.value(*c), ts, pid, did, &mut out);
        }
        for (c, tr) in &mut t.out_of_range {
            let bad = dp.value(*c).is_some_and(|v| !cfg.plausible(*c, v));
            tr.observe(bad, ts, pid, did, &mut out);
        }
        t.removed.observe(cfg.sensor_removed(dp), ts, pid, did, &mut out);
        t.activity.observe(cfg.activity(dp), ts, pid, did, &mut out);
        // closings first so consumers never see two open flags of a kind
        out.sort_by_key(|u| !matches!(u, FlagUpdate::Closed(_)));
        out
    }

    /// Currently open flags across all devices.
    pub fn open_flags(&self) -> Vec<IntegrityFlag> {
        self.devices
            .values()
            .flat_map(|d| d.trackers().filter_map(|t| t.open.clone()))
            .collect()
    }
}

/// Folds a sequence of updates into the final flag list, ordered by start.
pub fn collect_flags(updates: impl IntoIterator<Item = FlagUpdate>) -> Vec<IntegrityFlag> {
    let mut flags: Vec<IntegrityFlag> = Vec::new();
    for u in updates {
        let f = u.flag().clone();
        let same = |g: &IntegrityFlag| {
            g.kind == f.kind
                && g.start_ms == f.start_ms
                && g.device_id == f.device_id
                && g.affected_channels == f.affected_channels
        };
        match flags.iter_mut().find(|g| same(g)) {
            Some(g) => *g = f,
            None => flags.push(f),
        }
    }
    flags.sort_by(|a, b| {
        (a.start_ms, a.kind, &a.affected_channels).cmp(&(b.start_ms, b.kind, &b.affected_channels))
    });
    flags
}

fn batch(window: &[DataPoint], cfg: &IntegrityConfig, keep: impl Fn(FlagKind) -> bool) -> Vec<IntegrityFlag> {
    let mut m = IntegrityMonitor::new(cfg.clone());
    let updates: Vec<_> = window.iter().flat_map(|d| m.observe(d)).collect();
    collect_flags(updates)
        .into_iter()
        .filter(|f| keep(f.kind))
        .collect()
}

/// Device faults (low battery, stuck value, implausible value) over a window.
pub fn assess_device(window: &[DataPoint], cfg: &IntegrityConfig) -> Vec<IntegrityFlag> {
    batch(window, cfg, |k| {
        matches!(k, FlagKind::LowBattery | FlagKind::StuckValue | FlagKind::OutOfRange)
    })
}

/// Patient non-compliance (sensor removal, activity artifact) over a window.
pub fn detect_noncompliance(window: &[DataPoint], cfg: &IntegrityConfig) -> Vec<IntegrityFlag> {
    batch(window, cfg, |k| {
        matches!(k, FlagKind::SensorRemoved | FlagKind::ActivityArtifact)
    })
}

/// Result of [`mask_or_escalate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Masked {
    /// Candidates converted into device advisories.
    pub suppressed: Vec<AlarmEvent>,
    /// Candidates that pass unchanged.
    pub surviving: Vec<AlarmEvent>,
}

fn masking_flags(flags: &[IntegrityFlag], at_ms: i64) -> impl Iterator<Item = &IntegrityFlag> {
    flags
        .iter()
        .filter(move |f| f.kind.masks_evidence() && f.is_active_at(at_ms))
}

fn covered(flags: &[IntegrityFlag], at_ms: i64, channel: Channel) -> bool {
    masking_flags(flags, at_ms).any(|f| f.covers(channel))
}

/// Whether `candidate` would be suppressed by `flags` at its trigger time.
pub fn is_masked(flags: &[IntegrityFlag], candidate: &AlarmEvent) -> bool {
    let at = candidate.trigger_time_ms;
    if candidate.rule_id == rule_ids::TRANSIENT {
        // at least two signs must keep an unflagged channel
        let mut unflagged = [false; 4];
        for &c in &candidate.channels {
            if let Some(s) = Sign::of_channel(c) {
                if !covered(flags, at, c) {
                    unflagged[s as usize] = true;
                }
            }
        }
        return unflagged.iter().filter(|u| **u).count() < 2;
    }
    if candidate.severity != Severity::HighSeverity || candidate.channels.is_empty() {
        return false;
    }
    candidate.channels.iter().all(|c| covered(flags, at, *c))
}

/// Converts a candidate into the device advisory that replaces it. The trace
/// names the suppressed rule and each covering flag.
pub fn suppress(flags: &[IntegrityFlag], candidate: AlarmEvent) -> AlarmEvent {
    let at = candidate.trigger_time_ms;
    let mut trace = vec![RuleTraceEntry::new(
        candidate.rule_id.clone(),
        f64::NAN,
        f64::NAN,
        TraceOutcome::Suppressed,
    )
    .with_detail(format!("suppressed {}", candidate.rule_id))];
    for f in masking_flags(flags, at).filter(|f| candidate.channels.iter().any(|c| f.covers(*c))) {
        trace.push(
            RuleTraceEntry::new(format!("flag:{}", f.kind), f.start_ms as f64, f64::NAN, TraceOutcome::SuppressedBy)
                .with_detail(f.describe()),
        );
    }
    trace.extend(candidate.rule_trace);
    AlarmEvent {
        rule_id: rule_ids::INTEGRITY_SUPPRESSED.into(),
        severity: Severity::Advisory,
        rule_trace: trace,
        ..candidate
    }
}

/// The rule a device advisory stands in for.
pub fn suppressed_rule(advisory: &AlarmEvent) -> Option<&str> {
    (advisory.rule_id == rule_ids::INTEGRITY_SUPPRESSED)
        .then(|| advisory.rule_trace.first().map(|e| e.rule_id.as_str()))
        .flatten()
}

/// Splits candidate raises into device advisories and survivors.
///
/// A high-severity candidate whose evidence channels are all covered by an
/// active masking flag becomes an advisory; a transient-episode advisory is
/// kept as long as two of its signs have an unflagged channel. Everything else
/// passes through.
pub fn mask_or_escalate(flags: &[IntegrityFlag], pending: Vec<AlarmEvent>) -> Masked {
    let mut out = Masked::default();
    for c in pending {
        if is_masked(flags, &c) {
            out.suppressed.push(suppress(flags, c));
        } else {
            out.surviving.push(c);
        }
    }
    out
}
