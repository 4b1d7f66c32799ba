use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::{Channel, DataPoint, DeviceId, DeviceMeta, FlagKind, VitalsSample};

use super::script::{ChannelTargets, EventKind, InvalidScript, ScenarioScript};

/// Timestamp of the first data-point of every generated stream.
pub const STREAM_EPOCH_MS: i64 = 1_600_000_000_000;

const DEFAULT_BATTERY: f64 = 95.0;
const LOW_BATTERY: f64 = 5.0;

/// Device id used for a generated patient's only device.
pub fn device_for(script: &ScenarioScript) -> DeviceId {
    DeviceId::new(format!("{}-ox", script.profile.patient_id))
}

/// Absolute timestamp of second `k` of a generated stream.
pub fn stream_ts(k: u32) -> i64 {
    STREAM_EPOCH_MS + i64::from(k) * 1000
}

fn clamp(c: Channel, v: f64) -> f64 {
    match c {
        Channel::Spo2 => v.clamp(0.0, 100.0),
        Channel::Hr => v.clamp(1.0, 299.0),
        Channel::Rr => v.clamp(1.0, 119.0),
        Channel::Sys | Channel::Dia => v.max(1.0),
        Channel::Temp => v,
    }
}

fn implausible(c: Channel, k: u32) -> f64 {
    let step = f64::from(k % 10);
    match c {
        Channel::Hr => 260.0 + step,
        Channel::Rr => 90.0 + step,
        _ => 30.0 + step,
    }
}

/// One data-point per second of the script, less scripted gaps. The stream is
/// a pure function of `(script, seed)`: noise comes from ChaCha8 seeded with
/// `seed` alone, and six draws are taken every second whether or not the
/// second is emitted.
pub fn generate(script: &ScenarioScript, seed: u64) -> Result<Vec<DataPoint>, InvalidScript> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let pid = script.profile.patient_id.clone();
    let did = device_for(script);
    let mut out = Vec::with_capacity(script.duration_s() as usize);
    let mut frozen: Vec<Option<f64>> = vec![None; script.events.len()];

    let mut k = 0u32;
    let mut targets = ChannelTargets::default();
    for seg in &script.segments {
        targets = seg.targets.over(&targets);
        let noise = seg.noise.unwrap_or(script.noise);
        for i in 0..seg.duration_s {
            let mut vitals = VitalsSample::default();
            for c in Channel::ALL {
                let z: f64 = std_normal.sample(&mut rng);
                let base = targets.get(c).expect("validated").at(i, seg.duration_s);
                vitals.set(c, Some(clamp(c, base + z * noise.get(c))));
            }
            let mut meta = DeviceMeta {
                battery_percent: Some(DEFAULT_BATTERY),
                sensor_contact: Some(true),
                motion_flag: Some(false),
            };
            let mut emit = true;
            for (ev, frozen) in script.events.iter().zip(frozen.iter_mut()) {
                if !ev.covers(k) {
                    continue;
                }
                match ev.kind {
                    EventKind::Gap { .. } => emit = false,
                    EventKind::Motion { .. } => meta.motion_flag = Some(true),
                    EventKind::SensorRemoval { .. } => {
                        meta.sensor_contact = Some(false);
                        for c in Channel::ALL.into_iter().filter(|c| *c != Channel::Temp) {
                            vitals.set(c, None);
                        }
                    }
                    EventKind::DeviceFault { fault, channel, .. } => match fault {
                        FlagKind::LowBattery => meta.battery_percent = Some(LOW_BATTERY),
                        FlagKind::StuckValue => {
                            let v = *frozen.get_or_insert(vitals.get(channel).unwrap_or(0.0));
                            vitals.set(channel, Some(v));
                        }
                        FlagKind::OutOfRange => vitals.set(channel, Some(implausible(channel, k))),
                        FlagKind::Gap => emit = false,
                        FlagKind::SensorRemoved | FlagKind::ActivityArtifact => {}
                    },
                }
            }
            if emit {
                out.push(DataPoint {
                    patient_id: pid.clone(),
                    device_id: did.clone(),
                    timestamp_ms: stream_ts(k),
                    vitals,
                    device_meta: meta,
                });
            }
            k += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PatientProfile;
    use crate::sim::script::{ScriptEvent, Segment, Target};

    fn flat(duration_s: u32) -> ScenarioScript {
        let mut t = ChannelTargets::default();
        for (c, v) in Channel::ALL.into_iter().zip([97.0, 72.0, 14.0, 118.0, 76.0, 36.8]) {
            t.set(c, Target::Const(v));
        }
        ScenarioScript {
            scenario_id: "flat".into(),
            profile: PatientProfile::new("p", 40),
            noise: Default::default(),
            segments: vec![Segment {
                duration_s,
                targets: t,
                noise: None,
            }],
            events: vec![],
            ground_truth: vec![],
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let s = flat(300);
        assert_eq!(generate(&s, 42).unwrap(), generate(&s, 42).unwrap());
        assert_ne!(generate(&s, 42).unwrap(), generate(&s, 43).unwrap());
    }

    #[test]
    fn zero_noise_hits_targets() {
        let pts = generate(&flat(600).zero_noise(), 1).unwrap();
        assert_eq!(pts.len(), 600);
        assert!(pts.iter().all(|d| d.vitals.spo2_percent == Some(97.0) && d.vitals.heart_rate_bpm == Some(72.0)));
        assert_eq!(pts[599].timestamp_ms - pts[0].timestamp_ms, 599_000);
    }

    #[test]
    fn gap_event_drops_points() {
        let mut s = flat(300);
        s.events.push(ScriptEvent {
            at_s: 100,
            kind: EventKind::Gap { duration_s: 30 },
        });
        let pts = generate(&s, 3).unwrap();
        assert_eq!(pts.len(), 270);
        let missing: Vec<_> = (0..300)
            .filter(|k| !pts.iter().any(|d| d.timestamp_ms == stream_ts(*k)))
            .collect();
        assert_eq!(missing, (100..130).collect::<Vec<_>>());
        // the gap leaves the noise of later seconds unchanged
        let plain = generate(&flat(300), 3).unwrap();
        assert_eq!(pts[100], plain[130]);
    }

    #[test]
    fn ramp_and_wave_targets() {
        let r = Target::Ramp { from: 96.0, to: 88.0 };
        assert_eq!(r.at(0, 100), 96.0);
        assert_eq!(r.at(50, 100), 92.0);
        let w = Target::Wave {
            center: 93.5,
            amplitude: 0.5,
            period_s: 60,
        };
        assert_eq!(w.at(0, 10), 94.0);
        assert_eq!(w.at(30, 10), 93.0);
        assert_eq!(w.at(60, 10), 94.0);
    }

    #[test]
    fn invalid_scripts_are_refused() {
        let mut s = flat(100);
        s.events.push(ScriptEvent {
            at_s: 90,
            kind: EventKind::Motion { duration_s: 20 },
        });
        assert!(generate(&s, 0).is_err());
        let mut s = flat(100);
        s.segments[0].targets.hr = None;
        assert!(generate(&s, 0).is_err());
    }
}
