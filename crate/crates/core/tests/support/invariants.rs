//! Generative invariant checks shared by the core test suite and the
//! acceptance run. Each check drives its own deterministic proptest runner
//! so case counts are set by the caller.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestError, TestRng, TestRunner};
use rpm_core::engine::{reproduces, rule_ids, AlarmEngine, PatientState};
use rpm_core::ingest::{Gateway, SubmitError};
use rpm_core::registry::ProfileRegistry;
use rpm_core::{AlarmPolicy, AlarmState, DataPoint, DeviceMeta, PatientProfile, VitalsSample};

#[allow(dead_code)]
pub type Check = fn(u32) -> Result<(), String>;

/// Name and check for every invariant suite.
#[allow(dead_code)]
pub const SUITES: [(&str, Check); 4] = [
    ("watermark monotonicity", watermark_monotonicity),
    ("alarm state-machine safety", state_machine_safety),
    ("threshold monotonicity (92 vs 95)", threshold_monotonicity),
    ("evidence sufficiency", evidence_sufficiency),
];

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn outcome<T: std::fmt::Debug>(r: Result<(), TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

/// Counts how often interesting situations occurred, so a property that
/// passes because its generator never reaches them fails instead.
#[derive(Default)]
struct Tally(RefCell<BTreeMap<String, u32>>);

impl Tally {
    fn hit(&self, key: impl Into<String>) {
        *self.0.borrow_mut().entry(key.into()).or_default() += 1;
    }

    fn require(&self, minimums: &[(&str, u32)]) -> Result<(), String> {
        let seen = self.0.borrow();
        for &(key, min) in minimums {
            let n = seen.get(key).copied().unwrap_or(0);
            if n < min {
                return Err(format!("generator reached {key} {n} times, need {min}; seen {seen:?}"));
            }
        }
        Ok(())
    }
}

const NORMAL: [f64; 5] = [97.0, 74.0, 14.0, 120.0, 78.0];

/// A stretch of stream whose vitals (spo2, hr, rr, sys, dia) move linearly
/// from `from` to `to`.
#[derive(Debug, Clone)]
pub struct Regime {
    duration_s: u32,
    from: [f64; 5],
    to: [f64; 5],
}

fn held(duration_s: u32, v: [f64; 5]) -> Regime {
    Regime {
        duration_s,
        from: v,
        to: v,
    }
}

/// Quiet stretches, single-sign excursions (SpO2 dip, tachycardia, rising
/// breathing rate) and multi-sign instability.
fn regime() -> impl Strategy<Value = Regime> {
    let with = |i: usize, x: f64| {
        let mut v = NORMAL;
        v[i] = x;
        v
    };
    prop_oneof![
        (5u32..300).prop_map(|d| held(d, NORMAL)),
        (5u32..400, 84.0..99.0).prop_map(move |(d, spo2)| held(d, with(0, spo2))),
        (5u32..400, 90.0..150.0).prop_map(move |(d, hr)| held(d, with(1, hr))),
        (300u32..900, 12.0..18.0, 18.0..34.0).prop_map(move |(d, a, b)| Regime {
            duration_s: d,
            from: with(2, a),
            to: with(2, b),
        }),
        (5u32..1200, 84.0..99.0, (50.0..150.0, 8.0..40.0, 95.0..170.0, 55.0..100.0)).prop_map(
            |(d, spo2, (hr, rr, sys, dia))| held(d, [spo2, hr, rr, sys, dia])
        ),
    ]
}

/// SpO2-only regimes for threshold comparisons.
fn spo2_regime() -> impl Strategy<Value = Regime> {
    (5u32..300, 86.0..99.0).prop_map(|(d, spo2)| {
        let mut v = NORMAL;
        v[0] = spo2;
        held(d, v)
    })
}

/// Regimes plus per-second jitter and dropped seconds, capped at `max_s`.
fn stream(regimes: &[Regime], jitter: &[(f64, bool)], max_s: usize) -> Vec<DataPoint> {
    let mut out = Vec::new();
    let mut t = 0usize;
    'outer: for r in regimes {
        for k in 0..r.duration_s {
            if t >= max_s {
                break 'outer;
            }
            let (j, dropped) = jitter[t % jitter.len()];
            t += 1;
            if dropped {
                continue;
            }
            let f = f64::from(k) / f64::from(r.duration_s);
            let v: Vec<f64> = (0..5).map(|i| r.from[i] + (r.to[i] - r.from[i]) * f).collect();
            out.push(DataPoint {
                patient_id: "p".into(),
                device_id: "d".into(),
                timestamp_ms: 1_000 * t as i64,
                vitals: VitalsSample {
                    spo2_percent: Some((v[0] + j).clamp(50.0, 100.0)),
                    heart_rate_bpm: Some(v[1] + 2.0 * j),
                    resp_rate_bpm: Some(v[2] + 0.5 * j),
                    systolic_mmhg: Some(v[3] + 2.0 * j),
                    diastolic_mmhg: Some(v[4] + j),
                    temp_celsius: Some(36.8),
                },
                device_meta: DeviceMeta::default(),
            });
        }
    }
    out
}

fn jitter() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((-0.8f64..0.8, prop::bool::weighted(0.03)), 64)
}

/// Ingest: the watermark never moves back, and a point is accepted exactly
/// when it is valid and newer than the watermark. Validation is checked
/// before staleness.
pub fn watermark_monotonicity(cases: u32) -> Result<(), String> {
    let points = prop::collection::vec((-3i64..600, prop::bool::weighted(0.9)), 1..200);
    outcome(runner(cases).run(&points, |points| {
        let reg = ProfileRegistry::new(AlarmPolicy::default(), false);
        reg.register(PatientProfile::new("p", 40)).unwrap();
        let gateway = Gateway::new(Arc::new(reg));
        let mut s = gateway.open_session(&"p".into(), &"d".into(), 0).unwrap();
        let mut accepted_ts = Vec::new();
        for (sec, valid) in points {
            let before = s.watermark_ms();
            let ts = sec * 1000;
            let spo2 = if valid { 96.0 } else { 140.0 };
            // non-positive timestamps fail validation
            let valid = valid && ts > 0;
            let dp = DataPoint {
                patient_id: "p".into(),
                device_id: "d".into(),
                timestamp_ms: ts,
                vitals: VitalsSample {
                    spo2_percent: Some(spo2),
                    ..VitalsSample::default()
                },
                device_meta: DeviceMeta::default(),
            };
            match s.accept(dp, ts.max(0)) {
                Ok(a) => {
                    prop_assert!(valid && ts > before);
                    prop_assert_eq!(a.ack_ts(), ts);
                    accepted_ts.push(ts);
                }
                Err(SubmitError::StaleTimestamp { .. }) => prop_assert!(valid && ts <= before),
                Err(SubmitError::Validation(_)) => prop_assert!(!valid),
                Err(e) => return Err(TestCaseError::fail(format!("unexpected {e}"))),
            }
            prop_assert!(s.watermark_ms() >= before);
        }
        prop_assert!(accepted_ts.windows(2).all(|w| w[0] < w[1]));
        Ok(())
    }))
}

/// Engine: every alarm starts Raised and only moves forward, nothing
/// follows Cleared, each rule has at most one live alarm, and
/// acknowledgement succeeds only on a Raised alarm.
pub fn state_machine_safety(cases: u32) -> Result<(), String> {
    let input = (
        prop::collection::vec(regime(), 1..8),
        jitter(),
        prop::collection::vec(0usize..1800, 0..12),
    );
    let tally = Tally::default();
    outcome(runner(cases).run(&input, |(regimes, jitter, ack_at)| {
        let engine = AlarmEngine::default();
        let policy = AlarmPolicy::default();
        let mut state = PatientState::new("p".into());
        let mut last: HashMap<String, AlarmState> = HashMap::new();
        let mut live_by_rule: HashMap<String, String> = HashMap::new();
        let points = stream(&regimes, &jitter, 1800);
        for (i, dp) in points.into_iter().enumerate() {
            let ts = dp.timestamp_ms;
            let mut transitions = engine.evaluate(&mut state, dp, &policy, &[]).unwrap();
            if ack_at.contains(&i) {
                let target = state.active_alarms().next().map(|a| (a.alarm_id.clone(), a.state));
                if let Some((id, st)) = target {
                    let r = engine.acknowledge(&mut state, &id, "tester", ts);
                    prop_assert_eq!(r.is_ok(), st == AlarmState::Raised);
                    transitions.extend(r);
                }
            }
            prop_assert!(engine.acknowledge(&mut state, "p-unknown", "tester", ts).is_err());
            for t in transitions {
                let id = t.alarm.alarm_id.clone();
                let to = t.alarm.state;
                let legal = matches!(
                    (last.get(&id), to),
                    (None, AlarmState::Raised)
                        | (Some(AlarmState::Raised), AlarmState::Acknowledged | AlarmState::Cleared)
                        | (Some(AlarmState::Acknowledged), AlarmState::Cleared)
                );
                prop_assert!(legal, "{id}: {:?} -> {to:?}", last.get(&id));
                last.insert(id.clone(), to);
                tally.hit(to.wire_name());
                let rule = t.alarm.rule_id.clone();
                match to {
                    AlarmState::Raised => {
                        if let Some(other) = live_by_rule.insert(rule.clone(), id.clone()) {
                            return Err(TestCaseError::fail(format!("{rule}: {id} raised while {other} live")));
                        }
                    }
                    AlarmState::Acknowledged => {}
                    AlarmState::Cleared => {
                        live_by_rule.remove(&rule);
                    }
                }
            }
            let live: Vec<_> = state.active_alarms().map(|a| a.alarm_id.clone()).collect();
            for id in &live {
                prop_assert!(matches!(last.get(id), Some(AlarmState::Raised | AlarmState::Acknowledged)));
            }
        }
        Ok(())
    }))?;
    let min = cases / 20;
    tally.require(&[("raised", min), ("acknowledged", min), ("cleared", min)])
}

fn first_raise(points: &[DataPoint], policy: &AlarmPolicy) -> Option<i64> {
    let engine = AlarmEngine::default();
    let mut state = PatientState::new("p".into());
    for dp in points {
        let ts = dp.timestamp_ms;
        let raised = engine
            .evaluate(&mut state, dp.clone(), policy, &[])
            .unwrap()
            .into_iter()
            .any(|t| t.alarm.rule_id == rule_ids::SPO2_PERSISTENT_LOW && t.state() == AlarmState::Raised);
        if raised {
            return Some(ts);
        }
    }
    None
}

/// The same SpO2 stream alarms no later under a 95% threshold than under
/// the default 92%.
pub fn threshold_monotonicity(cases: u32) -> Result<(), String> {
    let input = (prop::collection::vec(spo2_regime(), 1..8), jitter());
    let tally = Tally::default();
    outcome(runner(cases).run(&input, |(regimes, jitter)| {
        let points = stream(&regimes, &jitter, 1200);
        let strict = AlarmPolicy {
            spo2_low_threshold_percent: 95.0,
            ..AlarmPolicy::default()
        };
        let at_92 = first_raise(&points, &AlarmPolicy::default());
        let at_95 = first_raise(&points, &strict);
        match (at_92, at_95) {
            (Some(_), Some(t95)) if Some(t95) < at_92 => tally.hit("95 earlier"),
            (Some(_), Some(_)) => tally.hit("same time"),
            (None, Some(_)) => tally.hit("95 only"),
            _ => {}
        }
        if let Some(t92) = at_92 {
            let t95 = at_95.ok_or_else(|| TestCaseError::fail(format!("92% fired at {t92}, 95% never")))?;
            prop_assert!(t95 <= t92, "95% at {t95}, 92% at {t92}");
        }
        Ok(())
    }))?;
    let min = cases / 20;
    tally.require(&[("95 earlier", min), ("95 only", min)])
}

/// Every raised alarm's evidence alone satisfies its rule.
pub fn evidence_sufficiency(cases: u32) -> Result<(), String> {
    let input = (prop::collection::vec(regime(), 1..8), jitter());
    let tally = Tally::default();
    outcome(runner(cases).run(&input, |(regimes, jitter)| {
        let engine = AlarmEngine::default();
        let policy = AlarmPolicy::default();
        let mut state = PatientState::new("p".into());
        for dp in stream(&regimes, &jitter, 1800) {
            for t in engine.evaluate(&mut state, dp, &policy, &[]).unwrap() {
                if t.state() != AlarmState::Raised {
                    continue;
                }
                tally.hit(t.alarm.rule_id.as_str());
                prop_assert!(!t.alarm.evidence.is_empty(), "{} has no evidence", t.alarm.alarm_id);
                prop_assert_eq!(
                    reproduces(&engine, &t.alarm, &policy),
                    Some(true),
                    "{} ({}) not reproduced from its evidence",
                    t.alarm.alarm_id,
                    t.alarm.rule_id
                );
            }
        }
        Ok(())
    }))?;
    let min = cases / 50;
    tally.require(&[
        (rule_ids::SPO2_PERSISTENT_LOW, min),
        (rule_ids::HR_PERSISTENT_HIGH, min),
        (rule_ids::RR_TREND_HIGH, min),
        (rule_ids::TRANSIENT, min),
        (rule_ids::SUSTAINED, min),
    ])
}
