use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::{Channel, DeviceId, PatientId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlagKind {
    #[serde(rename = "Fault_LowBattery")]
    LowBattery,
    #[serde(rename = "Fault_StuckValue")]
    StuckValue,
    #[serde(rename = "Fault_OutOfRange")]
    OutOfRange,
    #[serde(rename = "Fault_Gap")]
    Gap,
    #[serde(rename = "NonCompliance_SensorRemoved")]
    SensorRemoved,
    #[serde(rename = "NonCompliance_ActivityArtifact")]
    ActivityArtifact,
}

impl FlagKind {
    pub const ALL: [FlagKind; 6] = [
        FlagKind::LowBattery,
        FlagKind::StuckValue,
        FlagKind::OutOfRange,
        FlagKind::Gap,
        FlagKind::SensorRemoved,
        FlagKind::ActivityArtifact,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            FlagKind::LowBattery => "Fault_LowBattery",
            FlagKind::StuckValue => "Fault_StuckValue",
            FlagKind::OutOfRange => "Fault_OutOfRange",
            FlagKind::Gap => "Fault_Gap",
            FlagKind::SensorRemoved => "NonCompliance_SensorRemoved",
            FlagKind::ActivityArtifact => "NonCompliance_ActivityArtifact",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.wire_name() == s)
    }

    pub fn is_fault(self) -> bool {
        matches!(
            self,
            FlagKind::LowBattery | FlagKind::StuckValue | FlagKind::OutOfRange | FlagKind::Gap
        )
    }

    /// Whether an active flag of this kind invalidates the channel data it
    /// names. A low battery is a device warning only.
    pub fn masks_evidence(self) -> bool {
        !matches!(self, FlagKind::LowBattery)
    }
}

impl fmt::Display for FlagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

/// A classified fault or non-compliance interval `[start_ms, end_ms)`.
/// `end_ms` is `None` while the condition is ongoing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntegrityFlag {
    pub patient_id: PatientId,
    pub device_id: DeviceId,
    pub kind: FlagKind,
    pub start_ms: i64,
    pub end_ms: Option<i64>,
    pub affected_channels: Vec<Channel>,
}

impl IntegrityFlag {
    pub fn is_open(&self) -> bool {
        self.end_ms.is_none()
    }

    pub fn is_active_at(&self, t_ms: i64) -> bool {
        self.start_ms <= t_ms && self.end_ms.is_none_or(|e| t_ms < e)
    }

    pub fn covers(&self, channel: Channel) -> bool {
        self.affected_channels.contains(&channel)
    }

    pub fn describe(&self) -> String {
        let ch: Vec<_> = self.affected_channels.iter().map(|c| c.wire_name()).collect();
        format!("{}({})", self.kind, ch.join(","))
    }
}
