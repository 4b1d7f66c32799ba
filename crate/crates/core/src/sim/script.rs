use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Channel, FlagKind, PatientProfile};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid script {scenario}: {reason}")]
pub struct InvalidScript {
    pub scenario: String,
    pub reason: String,
}

/// Per-second target for one channel within a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Const(f64),
    /// Linear from `from` at the segment start towards `to` at its end.
    Ramp { from: f64, to: f64 },
    /// Triangle wave between `center - amplitude` and `center + amplitude`.
    Wave {
        center: f64,
        amplitude: f64,
        period_s: u32,
    },
}

impl Target {
    /// Value `k` seconds into a segment of `duration_s` seconds.
    pub fn at(self, k: u32, duration_s: u32) -> f64 {
        match self {
            Target::Const(v) => v,
            Target::Ramp { from, to } => from + (to - from) * f64::from(k) / f64::from(duration_s.max(1)),
            Target::Wave {
                center,
                amplitude,
                period_s,
            } => {
                let p = f64::from(k % period_s.max(1)) / f64::from(period_s.max(1));
                center + amplitude * (4.0 * (p - 0.5).abs() - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelTargets {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spo2: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sys: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dia: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp: Option<Target>,
}

impl ChannelTargets {
    pub fn get(&self, c: Channel) -> Option<Target> {
        match c {
            Channel::Spo2 => self.spo2,
            Channel::Hr => self.hr,
            Channel::Rr => self.rr,
            Channel::Sys => self.sys,
            Channel::Dia => self.dia,
            Channel::Temp => self.temp,
        }
    }

    pub fn set(&mut self, c: Channel, t: Target) {
        let slot = match c {
            Channel::Spo2 => &mut self.spo2,
            Channel::Hr => &mut self.hr,
            Channel::Rr => &mut self.rr,
            Channel::Sys => &mut self.sys,
            Channel::Dia => &mut self.dia,
            Channel::Temp => &mut self.temp,
        };
        *slot = Some(t);
    }

    /// `self` with every missing channel taken from `base`.
    pub fn over(mut self, base: &ChannelTargets) -> Self {
        for c in Channel::ALL {
            if self.get(c).is_none() {
                if let Some(t) = base.get(c) {
                    self.set(c, t);
                }
            }
        }
        self
    }
}

/// Gaussian noise standard deviation per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSigmas {
    pub spo2: f64,
    pub hr: f64,
    pub rr: f64,
    pub sys: f64,
    pub dia: f64,
    pub temp: f64,
}

impl Default for NoiseSigmas {
    fn default() -> Self {
        Self {
            spo2: 0.5,
            hr: 2.0,
            rr: 1.0,
            sys: 2.0,
            dia: 1.5,
            temp: 0.05,
        }
    }
}

impl NoiseSigmas {
    pub const ZERO: NoiseSigmas = NoiseSigmas {
        spo2: 0.0,
        hr: 0.0,
        rr: 0.0,
        sys: 0.0,
        dia: 0.0,
        temp: 0.0,
    };

    pub fn get(&self, c: Channel) -> f64 {
        match c {
            Channel::Spo2 => self.spo2,
            Channel::Hr => self.hr,
            Channel::Rr => self.rr,
            Channel::Sys => self.sys,
            Channel::Dia => self.dia,
            Channel::Temp => self.temp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_s: u32,
    /// Channels left out carry over from the previous segment.
    #[serde(default)]
    pub targets: ChannelTargets,
    /// Replaces the script-level noise for this segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSigmas>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum EventKind {
    /// Contact lost; every channel but temperature goes absent.
    SensorRemoval { duration_s: u32 },
    DeviceFault {
        fault: FlagKind,
        duration_s: u32,
        #[serde(default = "default_fault_channel")]
        channel: Channel,
    },
    /// No data-points at all.
    Gap { duration_s: u32 },
    Motion { duration_s: u32 },
}

fn default_fault_channel() -> Channel {
    Channel::Spo2
}

impl EventKind {
    pub fn duration_s(&self) -> u32 {
        match *self {
            EventKind::SensorRemoval { duration_s }
            | EventKind::DeviceFault { duration_s, .. }
            | EventKind::Gap { duration_s }
            | EventKind::Motion { duration_s } => duration_s,
        }
    }
}

/// Unknown keys are rejected by [`EventKind`], which sees every key but `at_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub at_s: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl ScriptEvent {
    pub fn covers(&self, k: u32) -> bool {
        k >= self.at_s && k < self.at_s + self.kind.duration_s()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Alarm(String),
    Flag(FlagKind),
    None,
}

/// Expected outcome over `[from_s, to_s]`, in seconds from stream start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub from_s: u32,
    pub to_s: u32,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub scenario_id: String,
    pub profile: PatientProfile,
    #[serde(default)]
    pub noise: NoiseSigmas,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
    #[serde(default)]
    pub ground_truth: Vec<GroundTruth>,
}

impl ScenarioScript {
    pub fn duration_s(&self) -> u32 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Same script without any noise.
    pub fn zero_noise(&self) -> Self {
        let mut s = self.clone();
        s.noise = NoiseSigmas::ZERO;
        for seg in &mut s.segments {
            seg.noise = None;
        }
        s
    }

    pub fn with_noise(&self, noise: NoiseSigmas) -> Self {
        let mut s = self.zero_noise();
        s.noise = noise;
        s
    }

    /// Whether the ground truth expects any alarm or flag.
    pub fn has_positives(&self) -> bool {
        self.ground_truth.iter().any(|g| g.label != Label::None)
    }

    pub fn validate(&self) -> Result<(), InvalidScript> {
        let fail = |reason: String| {
            Err(InvalidScript {
                scenario: self.scenario_id.clone(),
                reason,
            })
        };
        if self.segments.is_empty() {
            return fail("no segments".into());
        }
        if let Err(e) = self.profile.check() {
            return fail(e);
        }
        if let Some(i) = self.segments.iter().position(|s| s.duration_s == 0) {
            return fail(format!("segment {i} has zero duration"));
        }
        let first = &self.segments[0].targets;
        if let Some(c) = Channel::ALL.iter().find(|c| first.get(**c).is_none()) {
            return fail(format!("first segment lacks a target for {c}"));
        }
        let total = self.duration_s();
        for e in &self.events {
            if e.kind.duration_s() == 0 || e.at_s + e.kind.duration_s() > total {
                return fail(format!("event at {} s does not fit in {total} s", e.at_s));
            }
            if let EventKind::DeviceFault { fault, channel, .. } = e.kind {
                let ok = match fault {
                    FlagKind::LowBattery | FlagKind::StuckValue | FlagKind::Gap => true,
                    FlagKind::OutOfRange => matches!(channel, Channel::Spo2 | Channel::Hr | Channel::Rr),
                    FlagKind::SensorRemoved | FlagKind::ActivityArtifact => false,
                };
                if !ok {
                    return fail(format!("unsupported device fault {fault} on {channel}"));
                }
            }
        }
        for g in &self.ground_truth {
            if g.from_s > g.to_s || g.to_s > total {
                return fail(format!("ground truth [{}, {}] outside 0..{total}", g.from_s, g.to_s));
            }
        }
        Ok(())
    }
}
