//! Named scenarios with ground truth.
//!
//! Every channel of a scripted stream keeps moving (slow triangle waves around
//! the baseline) so that a noise-free run never looks like a frozen sensor.
//! Only the scripted stuck-value fault repeats a value exactly.

use std::collections::BTreeMap;

use crate::domain::{Channel, Comorbidity, FlagKind, PatientProfile};
use crate::engine::rule_ids;

use super::script::{
    ChannelTargets, EventKind, GroundTruth, Label, NoiseSigmas, ScenarioScript, ScriptEvent, Segment,
    Target,
};

/// Length of the quiet lead-in before each scripted change.
pub const LEAD_IN_S: u32 = 600;
/// Case 3 ramp length used by the library entry.
pub const CASE3_DEFAULT_RAMP_S: u32 = 7200;

fn wave(center: f64, amplitude: f64, period_s: u32) -> Target {
    Target::Wave {
        center,
        amplitude,
        period_s,
    }
}

fn ramp(from: f64, to: f64) -> Target {
    Target::Ramp { from, to }
}

/// Resting vitals well inside every normal range.
pub fn baseline() -> ChannelTargets {
    ChannelTargets {
        spo2: Some(wave(97.0, 0.6, 47)),
        hr: Some(wave(74.0, 3.0, 53)),
        rr: Some(wave(14.5, 0.8, 61)),
        sys: Some(wave(120.0, 3.0, 67)),
        dia: Some(wave(78.0, 2.0, 71)),
        temp: Some(wave(36.8, 0.1, 83)),
    }
}

fn seg(duration_s: u32, targets: ChannelTargets) -> Segment {
    Segment {
        duration_s,
        targets,
        noise: None,
    }
}

fn script(id: &str, profile: PatientProfile, segments: Vec<Segment>) -> ScenarioScript {
    let mut s = ScenarioScript {
        scenario_id: id.into(),
        profile,
        noise: NoiseSigmas::default(),
        segments,
        events: vec![],
        ground_truth: vec![],
    };
    let total = s.duration_s();
    s.ground_truth.push(GroundTruth {
        from_s: 0,
        to_s: total,
        label: Label::None,
    });
    s
}

fn expect(s: &mut ScenarioScript, from_s: u32, to_s: u32, label: Label) {
    s.ground_truth.retain(|g| g.label != Label::None);
    s.ground_truth.push(GroundTruth { from_s, to_s, label });
}

fn alarm(rule: &str) -> Label {
    Label::Alarm(rule.into())
}

/// First whole second at which `from + (to - from) * k / d` drops below `level`.
fn crossing_s(from: f64, to: f64, d: u32, level: f64) -> u32 {
    (0..d)
        .find(|k| from + (to - from) * f64::from(*k) / f64::from(d) < level)
        .unwrap_or(d)
}

pub fn recovery() -> ScenarioScript {
    script("recovery", PatientProfile::new("recovery", 45), vec![seg(1800, baseline())])
}

/// COPD patient whose physician lowered the SpO2 trigger to 95%; saturation
/// settles at 93-94% after a stable start at 95-96%.
pub fn case1_copd() -> ScenarioScript {
    let mut profile = PatientProfile::new("case1_copd", 60);
    profile.comorbidities.extend([
        Comorbidity::Copd,
        Comorbidity::Smoker,
        Comorbidity::Diabetes,
        Comorbidity::Hypertension,
    ]);
    profile.policy_overrides.spo2_low_threshold_percent = Some(95.0);
    let rr = wave(12.5, 0.3, 61);
    let stable = ChannelTargets {
        spo2: Some(wave(96.0, 0.5, 50)),
        rr: Some(rr),
        ..Default::default()
    }
    .over(&baseline());
    let (drop_s, hover_s) = (120, 1800);
    let mut s = script(
        "case1_copd",
        profile,
        vec![
            seg(LEAD_IN_S, stable),
            seg(
                drop_s,
                ChannelTargets {
                    spo2: Some(ramp(96.0, 93.5)),
                    ..Default::default()
                },
            ),
            seg(
                hover_s,
                ChannelTargets {
                    spo2: Some(wave(93.5, 0.5, 50)),
                    ..Default::default()
                },
            ),
        ],
    );
    let total = s.duration_s();
    let below_95 = LEAD_IN_S + crossing_s(96.0, 93.5, drop_s, 95.0);
    expect(&mut s, below_95, total, alarm(rule_ids::SPO2_PERSISTENT_LOW));
    s
}

/// Panic attack: heart rate 130, blood pressure 150/90 and respiratory rate
/// 35 for five minutes, then back to baseline.
pub fn case2_anxiety() -> ScenarioScript {
    let mut profile = PatientProfile::new("case2_anxiety", 30);
    profile.comorbidities.insert(Comorbidity::AnxietyDisorder);
    let b = baseline();
    let peak = |hr, sys, dia, rr| ChannelTargets {
        hr: Some(hr),
        sys: Some(sys),
        dia: Some(dia),
        rr: Some(rr),
        ..Default::default()
    };
    let mut s = script(
        "case2_anxiety",
        profile,
        vec![
            seg(LEAD_IN_S, b),
            // heart rate and pressure climb together, then breathing
            seg(20, peak(ramp(74.0, 130.0), ramp(120.0, 150.0), ramp(78.0, 90.0), wave(14.5, 0.8, 61))),
            seg(20, peak(wave(130.0, 1.0, 7), wave(150.0, 1.0, 9), wave(90.5, 0.5, 11), ramp(14.5, 35.0))),
            seg(150, peak(ramp(130.0, 132.0), ramp(150.0, 152.0), ramp(90.0, 91.0), ramp(35.0, 36.0))),
            seg(150, peak(ramp(132.0, 130.0), ramp(152.0, 150.0), ramp(91.0, 90.0), ramp(36.0, 35.0))),
            seg(30, peak(ramp(130.0, 74.0), ramp(150.0, 120.0), ramp(90.0, 78.0), ramp(35.0, 14.5))),
            seg(900, b),
        ],
    );
    expect(&mut s, LEAD_IN_S, LEAD_IN_S + 370, alarm(rule_ids::TRANSIENT));
    s
}

/// Heart-failure patient whose saturation slides from 96% to 88% over
/// `ramp_s` seconds.
pub fn case3_gradual(ramp_s: u32) -> ScenarioScript {
    let mut profile = PatientProfile::new("case3_gradual", 75);
    profile.comorbidities.insert(Comorbidity::CardiacDisease);
    let b = ChannelTargets {
        spo2: Some(wave(96.5, 0.4, 50)),
        ..Default::default()
    }
    .over(&baseline());
    let mut s = script(
        "case3_gradual",
        profile,
        vec![
            seg(LEAD_IN_S, b),
            seg(
                ramp_s,
                ChannelTargets {
                    spo2: Some(ramp(96.0, 88.0)),
                    ..Default::default()
                },
            ),
        ],
    );
    let below_92 = LEAD_IN_S + crossing_s(96.0, 88.0, ramp_s, 92.0);
    expect(&mut s, below_92, LEAD_IN_S + ramp_s, alarm(rule_ids::SPO2_PERSISTENT_LOW));
    s
}

/// Saturation falls to 86-87% while breathing stays normal.
pub fn silent_hypoxia() -> ScenarioScript {
    let mut s = script(
        "silent_hypoxia",
        PatientProfile::new("silent_hypoxia", 52),
        vec![
            seg(LEAD_IN_S, baseline()),
            seg(
                900,
                ChannelTargets {
                    spo2: Some(ramp(97.0, 86.5)),
                    ..Default::default()
                },
            ),
            seg(
                600,
                ChannelTargets {
                    spo2: Some(wave(86.5, 0.5, 50)),
                    ..Default::default()
                },
            ),
        ],
    );
    let total = s.duration_s();
    let below_92 = LEAD_IN_S + crossing_s(97.0, 86.5, 900, 92.0);
    expect(&mut s, below_92, total, alarm(rule_ids::SPO2_PERSISTENT_LOW));
    s
}

/// Baseline, then an abrupt drop to 87-89% at `onset_s` held to `duration_s`.
/// Not in the library; load tests use it to plant a known alarm.
pub fn scripted_desaturation(onset_s: u32, duration_s: u32) -> ScenarioScript {
    let mut s = script(
        "scripted_desaturation",
        PatientProfile::new("scripted_desaturation", 50),
        vec![
            seg(onset_s, baseline()),
            seg(
                duration_s - onset_s,
                ChannelTargets {
                    spo2: Some(wave(88.0, 0.5, 50)),
                    ..baseline()
                },
            ),
        ],
    );
    expect(&mut s, onset_s, duration_s, alarm(rule_ids::SPO2_PERSISTENT_LOW));
    s
}

fn with_event(id: &str, event: EventKind, label: Label) -> ScenarioScript {
    let mut s = script(id, PatientProfile::new(id, 50), vec![seg(1500, baseline())]);
    let at_s = LEAD_IN_S;
    s.events.push(ScriptEvent { at_s, kind: event });
    expect(&mut s, at_s, at_s + event.duration_s(), label);
    s
}

pub fn stuck_sensor() -> ScenarioScript {
    with_event(
        "stuck_sensor",
        EventKind::DeviceFault {
            fault: FlagKind::StuckValue,
            duration_s: 300,
            channel: Channel::Spo2,
        },
        Label::Flag(FlagKind::StuckValue),
    )
}

pub fn sensor_removal() -> ScenarioScript {
    with_event(
        "sensor_removal",
        EventKind::SensorRemoval { duration_s: 300 },
        Label::Flag(FlagKind::SensorRemoved),
    )
}

pub fn oximeter_dropout() -> ScenarioScript {
    with_event(
        "oximeter_dropout",
        EventKind::DeviceFault {
            fault: FlagKind::OutOfRange,
            duration_s: 90,
            channel: Channel::Spo2,
        },
        Label::Flag(FlagKind::OutOfRange),
    )
}

pub fn low_battery() -> ScenarioScript {
    with_event(
        "low_battery",
        EventKind::DeviceFault {
            fault: FlagKind::LowBattery,
            duration_s: 300,
            channel: Channel::Spo2,
        },
        Label::Flag(FlagKind::LowBattery),
    )
}

pub fn signal_gap() -> ScenarioScript {
    with_event(
        "signal_gap",
        EventKind::Gap { duration_s: 45 },
        Label::Flag(FlagKind::Gap),
    )
}

/// Exercise with the motion sensor on: heart rate 115 and breathing 24 for
/// a few minutes.
pub fn exercise_artifact() -> ScenarioScript {
    let b = baseline();
    let mut s = script(
        "exercise_artifact",
        PatientProfile::new("exercise_artifact", 35),
        vec![
            seg(LEAD_IN_S, b),
            seg(
                30,
                ChannelTargets {
                    hr: Some(ramp(74.0, 115.0)),
                    ..Default::default()
                },
            ),
            seg(
                20,
                ChannelTargets {
                    hr: Some(wave(115.0, 2.0, 13)),
                    rr: Some(ramp(14.5, 24.0)),
                    ..Default::default()
                },
            ),
            seg(
                150,
                ChannelTargets {
                    rr: Some(wave(24.0, 0.5, 17)),
                    ..Default::default()
                },
            ),
            seg(
                30,
                ChannelTargets {
                    hr: Some(ramp(115.0, 74.0)),
                    rr: Some(ramp(24.0, 14.5)),
                    ..Default::default()
                },
            ),
            seg(600, b),
        ],
    );
    let motion = EventKind::Motion { duration_s: 210 };
    s.events.push(ScriptEvent {
        at_s: LEAD_IN_S,
        kind: motion,
    });
    expect(&mut s, LEAD_IN_S, LEAD_IN_S + 210, Label::Flag(FlagKind::ActivityArtifact));
    s
}

/// Every named scenario, keyed by id.
pub fn scenario_library() -> BTreeMap<String, ScenarioScript> {
    [
        recovery(),
        case1_copd(),
        case2_anxiety(),
        case3_gradual(CASE3_DEFAULT_RAMP_S),
        silent_hypoxia(),
        stuck_sensor(),
        sensor_removal(),
        exercise_artifact(),
        oximeter_dropout(),
        low_battery(),
        signal_gap(),
    ]
    .into_iter()
    .map(|s| (s.scenario_id.clone(), s))
    .collect()
}

pub fn lookup(name: &str) -> Option<ScenarioScript> {
    scenario_library().remove(name)
}

/// Scenarios that inject a device fault or non-compliance event.
pub fn fault_scenarios() -> Vec<ScenarioScript> {
    scenario_library()
        .into_values()
        .filter(|s| !s.events.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_scripts_are_valid() {
        for (name, s) in scenario_library() {
            s.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn case2_peak_matches_narrative() {
        let s = lookup("case2_anxiety").unwrap();
        let peak = &s.segments[3].targets;
        assert_eq!(peak.hr, Some(ramp(130.0, 132.0)));
        assert_eq!(peak.sys, Some(ramp(150.0, 152.0)));
        assert_eq!(peak.dia, Some(ramp(90.0, 91.0)));
        assert_eq!(peak.rr, Some(ramp(35.0, 36.0)));
        assert_eq!(s.segments[3].duration_s + s.segments[4].duration_s, 300);
    }

    #[test]
    fn recovery_is_all_negative() {
        let s = lookup("recovery").unwrap();
        assert!(s.ground_truth.iter().all(|g| g.label == Label::None));
        assert!(lookup("no_such_scenario").is_none());
    }

    #[test]
    fn case3_truth_follows_ramp_length() {
        let s = case3_gradual(3600);
        let g = &s.ground_truth[0];
        assert_eq!((g.from_s, g.to_s), (LEAD_IN_S + 1801, LEAD_IN_S + 3600));
    }
}
