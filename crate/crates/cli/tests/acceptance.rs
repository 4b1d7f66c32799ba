//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs under `cargo test` and alone with
//! `cargo test -p rpm-cli --test acceptance`.

#[path = "../../core/tests/support/invariants.rs"]
mod invariants;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rpm_core::engine::rule_ids;
use rpm_core::eval::{
    log_to_string, replay, replay_stream, Corpus, CorpusEntry, ReplayConfig, ReplayMode,
};
use rpm_core::sim::library::{case1_copd, case2_anxiety, case3_gradual, fault_scenarios};
use rpm_core::sim::{instantiate, scenario_library, NoiseSigmas};
use rpm_core::wire::TopicEvent;
use rpm_core::{AlarmState, Severity};
use serde_json::Value;

const RPM: &str = env!("CARGO_BIN_EXE_rpm");
const PROPERTY_CASES: u32 = 1000;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn raises(events: &[TopicEvent], rule: &str) -> Vec<rpm_core::wire::TransitionRecord> {
    events
        .iter()
        .filter_map(|e| match e {
            TopicEvent::Transition(t) if t.rule == rule && t.state == AlarmState::Raised => Some(t.clone()),
            _ => None,
        })
        .collect()
}

fn zero_noise_entry(script: rpm_core::sim::ScenarioScript) -> CorpusEntry {
    CorpusEntry::generated(script.zero_noise(), 0).expect("library scripts generate")
}

fn case1() -> Verdict {
    let cfg = ReplayConfig::default();
    let with_override = replay_stream(&zero_noise_entry(case1_copd()), &cfg).map_err(|e| e.to_string())?;
    let mut plain = case1_copd();
    plain.profile.policy_overrides.spo2_low_threshold_percent = None;
    let without = replay_stream(&zero_noise_entry(plain), &cfg).map_err(|e| e.to_string())?;
    let (a, b) = (
        raises(&with_override.events, rule_ids::SPO2_PERSISTENT_LOW).len(),
        raises(&without.events, rule_ids::SPO2_PERSISTENT_LOW).len(),
    );
    ensure(a >= 1 && b == 0, format!("SpO2 alarms: {a} with 95% override, {b} with default 92%"))
}

fn case2() -> Verdict {
    let r = replay_stream(&zero_noise_entry(case2_anxiety()), &ReplayConfig::default()).map_err(|e| e.to_string())?;
    let transitions: Vec<_> = r
        .events
        .iter()
        .filter_map(|e| match e {
            TopicEvent::Transition(t) => Some(t),
            TopicEvent::Flag(_) => None,
        })
        .collect();
    let raised: Vec<_> = transitions.iter().filter(|t| t.state == AlarmState::Raised).collect();
    let [only] = raised.as_slice() else {
        return Err(format!("{} raises, expected 1", raised.len()));
    };
    let cleared = transitions
        .iter()
        .any(|t| t.alarm_id == only.alarm_id && t.state == AlarmState::Cleared);
    let last_ts = r.ledger.get(&only.alarm_id).map_or(only.ts, |a| a.trigger_time_ms);
    let bundle = r
        .ledger
        .build_justification(&only.alarm_id, last_ts)
        .map_err(|e| format!("justification: {e}"))?;
    ensure(
        only.rule == rule_ids::TRANSIENT && only.sev == Severity::Advisory && cleared && bundle.covers_evidence(),
        format!(
            "one {} {:?} alarm, auto-cleared {cleared}, justification with {} points covering evidence {}",
            only.rule,
            only.sev,
            bundle.vitals_history.len(),
            bundle.covers_evidence()
        ),
    )
}

fn case3() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for hours in [1u32, 2, 3, 6] {
        let entry = zero_noise_entry(case3_gradual(hours * 3600));
        let r = replay_stream(&entry, &ReplayConfig::default()).map_err(|e| e.to_string())?;
        // the ramp ends at 88% one second after its last sample
        let reaches_88 = entry
            .points
            .iter()
            .find(|d| d.vitals.spo2_percent.is_some_and(|v| v <= 88.0))
            .map(|d| d.timestamp_ms)
            .or(entry.points.last().map(|d| d.timestamp_ms + 1000));
        let high = r.events.iter().find_map(|e| match e {
            TopicEvent::Transition(t) if t.state == AlarmState::Raised && t.sev == Severity::HighSeverity => Some(t.ts),
            _ => None,
        });
        let lead_s = match (high, reaches_88) {
            (Some(h), Some(r88)) if h < r88 => (r88 - h) / 1000,
            _ => {
                ok = false;
                -1
            }
        };
        parts.push(format!("{hours}h ramp lead {lead_s}s"));
    }
    ensure(ok, format!("High alarm before SpO2 88%: {}", parts.join(", ")))
}

fn case_studies() -> Verdict {
    let started = Instant::now();
    let results = [("case1", case1()), ("case2", case2()), ("case3", case3())];
    let elapsed = started.elapsed();
    let ok = results.iter().all(|(_, r)| r.is_ok()) && elapsed < Duration::from_secs(120);
    let detail = results
        .iter()
        .map(|(n, r)| match r {
            Ok(d) => format!("{n}: {d}"),
            Err(d) => format!("{n} FAILED: {d}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    ensure(ok, format!("{detail}; {:.1}s", elapsed.as_secs_f64()))
}

fn cleanliness() -> Verdict {
    let out = Command::new(RPM)
        .args(["replay", "--corpus", "library", "--assert-clean"])
        .output()
        .map_err(|e| e.to_string())?;
    let zero_noise_clean = out.status.success();

    let cfg = ReplayConfig::default();
    let (mut fp, mut fn_) = (0, 0);
    for seed in 1..=20 {
        let corpus = Corpus::library(NoiseSigmas::default(), seed);
        let (_, report) = replay(&corpus, &cfg, ReplayMode::Parallel).map_err(|e| e.to_string())?;
        fp += report.aggregate.false_positive;
        fn_ += report.aggregate.false_negative;
    }
    ensure(
        zero_noise_clean && fn_ == 0 && fp <= 1,
        format!(
            "zero-noise replay --assert-clean exit {:?}; 20 noisy seeds FN={fn_} FP={fp}",
            out.status.code()
        ),
    )
}

fn masking() -> Verdict {
    let faulty: Vec<_> = fault_scenarios()
        .iter()
        .cycle()
        .take(50)
        .enumerate()
        .map(|(i, s)| instantiate(s, i as u64, None))
        .collect();
    let fault_free: Vec<_> = scenario_library()
        .into_values()
        .filter(|s| s.events.is_empty())
        .collect();
    let clean: Vec<_> = fault_free
        .iter()
        .cycle()
        .take(25)
        .enumerate()
        .map(|(i, s)| instantiate(s, 100 + i as u64, None))
        .collect();
    let on = ReplayConfig::default();
    let off = ReplayConfig {
        masking: false,
        ..ReplayConfig::default()
    };
    let run = |scripts: &[rpm_core::sim::ScenarioScript], cfg: &ReplayConfig| {
        replay(&Corpus::from_scripts(scripts.to_vec(), 11), cfg, ReplayMode::Parallel).map_err(|e| e.to_string())
    };
    let (_, faulty_on) = run(&faulty, &on)?;
    let (_, faulty_off) = run(&faulty, &off)?;
    let (clean_on, _) = run(&clean, &on)?;
    let (clean_off, _) = run(&clean, &off)?;
    let (a, b) = (faulty_on.high_severity_false_positive, faulty_off.high_severity_false_positive);
    let identical = log_to_string(&clean_on) == log_to_string(&clean_off);
    ensure(
        a <= b && identical,
        format!(
            "50 fault-injected streams: high-severity FP {a} masked vs {b} unmasked; 25 fault-free streams identical logs {identical}"
        ),
    )
}

fn bench(args: &[&str]) -> Result<Value, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("latency.json");
    let out = Command::new(RPM)
        .arg("bench")
        .args(args)
        .args(["--out", path.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("rpm bench exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let raw = std::fs::read_to_string(&path).map_err(|e| format!("LatencyReport JSON not written: {e}"))?;
    serde_json::from_str(&raw).map_err(|e| e.to_string())
}

fn field(v: &Value, k: &str) -> i64 {
    v[k].as_i64().unwrap_or(-1)
}

fn latency() -> Verdict {
    // one patient in four carries a desaturation that alarms about 70 s in
    let r = bench(&["--patients", "100", "--duration", "90", "--alarm-every", "4"])?;
    let n = r["latency_ms"].as_array().map_or(0, Vec::len);
    let p95 = field(&r, "p95_ms");
    ensure(
        n >= 25 && (0..450).contains(&p95),
        format!(
            "100 patients, {n} notifications: p50 {} ms, p95 {p95} ms, max {} ms",
            field(&r, "p50_ms"),
            field(&r, "max_ms")
        ),
    )
}

fn throughput() -> Verdict {
    let r = bench(&["--patients", "1000", "--duration", "300"])?;
    let (submitted, acked) = (field(&r, "submitted"), field(&r, "acked"));
    let (drops, stale, rejected) = (field(&r, "drops"), field(&r, "stale_rejections"), field(&r, "rejected"));
    let notes = r["latency_ms"].as_array().map_or(0, Vec::len);
    ensure(
        submitted == 300_000 && acked == submitted && drops == 0 && stale == 0 && rejected == 0 && notes >= 10,
        format!(
            "1000 patients x 300 s: submitted {submitted} acked {acked} drops {drops} stale {stale} rejected {rejected}, {:.0} points/s, {notes} alarm notifications delivered",
            r["throughput_pps"].as_f64().unwrap_or(0.0)
        ),
    )
}

fn determinism() -> Verdict {
    let library: Vec<_> = scenario_library().into_values().collect();
    let scripts: Vec<_> = library
        .iter()
        .cycle()
        .take(60)
        .enumerate()
        .map(|(i, s)| instantiate(s, i as u64, None))
        .collect();
    let corpus = Corpus::from_scripts(scripts, 2024);
    let cfg = ReplayConfig::default();
    let run = |mode| replay(&corpus, &cfg, mode).map_err(|e| e.to_string());
    let (log_a, rep_a) = run(ReplayMode::Sequential)?;
    let (log_b, rep_b) = run(ReplayMode::Sequential)?;
    let (log_p, rep_p) = run(ReplayMode::Parallel)?;
    let bytes_equal = log_to_string(&log_a) == log_to_string(&log_b);
    let parallel_equal = rep_a == rep_p && rep_a.to_json() == rep_p.to_json() && log_a == log_p;
    ensure(
        bytes_equal && parallel_equal && rep_a == rep_b,
        format!(
            "{} streams, {} log lines: repeat byte-identical {bytes_equal}, parallel report identical {parallel_equal}",
            corpus.len(),
            log_a.len()
        ),
    )
}

fn run(filters: &[String], name: &str, f: impl FnOnce() -> Verdict) -> bool {
    if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
        return true;
    }
    let started = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = started.elapsed().as_secs_f64();
    match &verdict {
        Ok(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
        Err(d) => println!("FAIL  {name}: {d} [{secs:.1}s]"),
    }
    verdict.is_ok()
}

/// Positional arguments select criteria by substring, like test filters.
fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let filters: Vec<String> = args.into_iter().filter(|a| !a.starts_with('-')).collect();
    let mut ok = true;
    ok &= run(&filters, "case-study reproduction", case_studies);
    ok &= run(&filters, "ground-truth cleanliness", cleanliness);
    ok &= run(&filters, "masking monotonicity", masking);
    ok &= run(&filters, "notification latency p95 < 450 ms", latency);
    ok &= run(&filters, "throughput 1000 patients at 1 Hz for 5 min", throughput);
    ok &= run(&filters, "determinism", determinism);
    for (name, check) in invariants::SUITES {
        ok &= run(&filters, &format!("invariant: {name} ({PROPERTY_CASES} cases)"), || {
            check(PROPERTY_CASES).map(|()| "no counterexample".to_string())
        });
    }
    if !ok {
        std::process::exit(1);
    }
}
