use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(id: impl AsRef<str>) -> Self {
                Self(Arc::from(id.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:?})", stringify!($name), &*self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(Arc::from(s))
            }
        }
    };
}

opaque_id!(
    /// Opaque patient identifier. Cheap to clone.
    PatientId
);
opaque_id!(
    /// Opaque device identifier. Cheap to clone.
    DeviceId
);

/// One vitals channel. Serialized with the short wire names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Spo2,
    Hr,
    Rr,
    Sys,
    Dia,
    Temp,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::Spo2,
        Channel::Hr,
        Channel::Rr,
        Channel::Sys,
        Channel::Dia,
        Channel::Temp,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            Channel::Spo2 => "spo2",
            Channel::Hr => "hr",
            Channel::Rr => "rr",
            Channel::Sys => "sys",
            Channel::Dia => "dia",
            Channel::Temp => "temp",
        }
    }

    /// Field name on [`VitalsSample`], used in validation messages.
    pub fn field_name(self) -> &'static str {
        match self {
            Channel::Spo2 => "spo2_percent",
            Channel::Hr => "heart_rate_bpm",
            Channel::Rr => "resp_rate_bpm",
            Channel::Sys => "systolic_mmhg",
            Channel::Dia => "diastolic_mmhg",
            Channel::Temp => "temp_celsius",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

/// A snapshot of vitals. Devices report subsets; absent channels are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VitalsSample {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spo2_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heart_rate_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resp_rate_bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub systolic_mmhg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diastolic_mmhg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp_celsius: Option<f64>,
}

impl VitalsSample {
    pub fn get(&self, channel: Channel) -> Option<f64> {
        match channel {
            Channel::Spo2 => self.spo2_percent,
            Channel::Hr => self.heart_rate_bpm,
            Channel::Rr => self.resp_rate_bpm,
            Channel::Sys => self.systolic_mmhg,
            Channel::Dia => self.diastolic_mmhg,
            Channel::Temp => self.temp_celsius,
        }
    }

    pub fn set(&mut self, channel: Channel, value: Option<f64>) {
        let slot = match channel {
            Channel::Spo2 => &mut self.spo2_percent,
            Channel::Hr => &mut self.heart_rate_bpm,
            Channel::Rr => &mut self.resp_rate_bpm,
            Channel::Sys => &mut self.systolic_mmhg,
            Channel::Dia => &mut self.diastolic_mmhg,
            Channel::Temp => &mut self.temp_celsius,
        };
        *slot = value;
    }

    pub fn is_empty(&self) -> bool {
        Channel::ALL.iter().all(|c| self.get(*c).is_none())
    }

    pub fn present(&self) -> impl Iterator<Item = (Channel, f64)> + '_ {
        Channel::ALL
            .iter()
            .filter_map(move |c| self.get(*c).map(|v| (*c, v)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_contact: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_flag: Option<bool>,
}

/// One timestamped vitals snapshot for one patient from one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub patient_id: PatientId,
    pub device_id: DeviceId,
    pub timestamp_ms: i64,
    pub vitals: VitalsSample,
    #[serde(default)]
    pub device_meta: DeviceMeta,
}

impl DataPoint {
    pub fn value(&self, channel: Channel) -> Option<f64> {
        self.vitals.get(channel)
    }
}
