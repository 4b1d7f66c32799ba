use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::domain::{AlarmState, Channel, FlagKind, Severity};
use crate::engine::rule_ids;
use crate::sim::{GroundTruth, Label, STREAM_EPOCH_MS};
use crate::wire::TopicEvent;

use super::corpus::{Corpus, CorpusEntry};
use super::report::{ConfusionReport, Counts, Summary};

/// Slack on either side of a labeled interval when matching output to it.
pub const MATCH_TOLERANCE_S: i64 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("alarm log names patient {0}, which is not in the corpus")]
pub struct MismatchedCorpus(pub String);

fn label_key(label: &Label) -> Option<String> {
    match label {
        Label::Alarm(rule) => Some(rule.clone()),
        Label::Flag(kind) => Some(format!("flag:{kind}")),
        Label::None => None,
    }
}

/// One positive interval and whether output has matched it yet.
struct Expected<'a> {
    truth: &'a GroundTruth,
    key: String,
    matched: bool,
}

impl Expected<'_> {
    fn contains(&self, ts_ms: i64) -> bool {
        let from = STREAM_EPOCH_MS + i64::from(self.truth.from_s) * 1000 - MATCH_TOLERANCE_S * 1000;
        let to = STREAM_EPOCH_MS + i64::from(self.truth.to_s) * 1000 + MATCH_TOLERANCE_S * 1000;
        (from..=to).contains(&ts_ms)
    }
}

/// An output occurrence reduced to what scoring needs.
struct Output {
    key: String,
    ts_ms: i64,
    severity: Severity,
}

/// Scores an alarm log against the corpus ground truth.
///
/// Each raised alarm (other than device advisories, which are tallied as
/// suppressed) and each distinct integrity flag is matched to an unmatched
/// labeled interval of the same key whose bounds, widened by
/// [`MATCH_TOLERANCE_S`], contain its trigger time. Further matches of an
/// already matched interval are duplicates; anything unmatched is a false
/// positive. Labeled intervals left unmatched are false negatives.
pub fn score(log: &[TopicEvent], corpus: &Corpus) -> Result<ConfusionReport, MismatchedCorpus> {
    let index: HashMap<&str, usize> = corpus
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.patient_id(), i))
        .collect();
    let mut outputs: Vec<Vec<Output>> = (0..corpus.len()).map(|_| Vec::new()).collect();
    let mut suppressed = vec![0u64; corpus.len()];
    let mut seen_flags: BTreeSet<(String, FlagKind, i64, String, Vec<Channel>)> = BTreeSet::new();

    for event in log {
        let i = *index
            .get(event.patient())
            .ok_or_else(|| MismatchedCorpus(event.patient().to_string()))?;
        match event {
            TopicEvent::Transition(t) if t.state == AlarmState::Raised => {
                if t.rule == rule_ids::INTEGRITY_SUPPRESSED {
                    suppressed[i] += 1;
                } else {
                    outputs[i].push(Output {
                        key: t.rule.clone(),
                        ts_ms: t.ts,
                        severity: t.sev,
                    });
                }
            }
            TopicEvent::Transition(_) => {}
            TopicEvent::Flag(f) => {
                if seen_flags.insert((f.pid.clone(), f.flag, f.from, f.did.clone(), f.ch.clone())) {
                    outputs[i].push(Output {
                        key: format!("flag:{}", f.flag),
                        ts_ms: f.from,
                        severity: Severity::Advisory,
                    });
                }
            }
        }
    }

    let mut report = ConfusionReport::default();
    let mut latencies = Vec::new();
    for (i, entry) in corpus.entries.iter().enumerate() {
        let scenario = score_entry(entry, &mut outputs[i], suppressed[i], &mut report, &mut latencies);
        report.per_scenario.entry(entry.script.scenario_id.clone()).or_default().add(&scenario);
        report.aggregate.add(&scenario);
    }
    report.detection_latency = Summary::of(&latencies);
    report.detection_latency_s = latencies;
    Ok(report)
}

fn score_entry(
    entry: &CorpusEntry,
    outputs: &mut [Output],
    suppressed: u64,
    report: &mut ConfusionReport,
    latencies: &mut Vec<f64>,
) -> Counts {
    let mut expected: Vec<Expected> = entry
        .script
        .ground_truth
        .iter()
        .filter_map(|g| {
            label_key(&g.label).map(|key| Expected {
                truth: g,
                key,
                matched: false,
            })
        })
        .collect();
    let mut counts = Counts {
        suppressed,
        ..Counts::default()
    };
    if suppressed > 0 {
        report.per_rule.entry(rule_ids::INTEGRITY_SUPPRESSED.to_string()).or_default().suppressed += suppressed;
    }
    if expected.is_empty() && outputs.is_empty() && suppressed == 0 {
        counts.true_negative = 1;
        return counts;
    }

    outputs.sort_by_key(|o| o.ts_ms);
    for out in outputs.iter() {
        let rule = report.per_rule.entry(out.key.clone()).or_default();
        let hit = expected
            .iter_mut()
            .filter(|e| e.key == out.key && e.contains(out.ts_ms))
            .min_by_key(|e| e.matched);
        match hit {
            Some(e) if !e.matched => {
                e.matched = true;
                counts.true_positive += 1;
                rule.true_positive += 1;
                let start = STREAM_EPOCH_MS + i64::from(e.truth.from_s) * 1000;
                latencies.push((out.ts_ms - start) as f64 / 1000.0);
            }
            Some(_) => {
                counts.duplicates += 1;
                rule.duplicates += 1;
            }
            None => {
                counts.false_positive += 1;
                rule.false_positive += 1;
                if out.severity == Severity::HighSeverity {
                    report.high_severity_false_positive += 1;
                }
            }
        }
    }
    for e in expected.iter().filter(|e| !e.matched) {
        counts.false_negative += 1;
        report.per_rule.entry(e.key.clone()).or_default().false_negative += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{lookup, NoiseSigmas};
    use crate::wire::{FlagRecord, TransitionRecord};

    fn corpus_of(name: &str) -> Corpus {
        Corpus::from_scripts(vec![lookup(name).unwrap().with_noise(NoiseSigmas::ZERO)], 0)
    }

    fn raised(pid: &str, rule: &str, sev: Severity, at_s: i64) -> TopicEvent {
        let ts = STREAM_EPOCH_MS + at_s * 1000;
        TopicEvent::Transition(TransitionRecord {
            alarm_id: format!("{pid}-1"),
            pid: pid.into(),
            rule: rule.into(),
            sev,
            state: AlarmState::Raised,
            ts,
            evidence_from: ts - 60_000,
            evidence_to: ts,
        })
    }

    #[test]
    fn silent_negative_stream_is_one_true_negative() {
        let c = corpus_of("recovery");
        let r = score(&[], &c).unwrap();
        assert_eq!(r.aggregate, Counts { true_negative: 1, ..Counts::default() });
        assert!(r.is_clean());
    }

    #[test]
    fn match_duplicate_and_false_positive() {
        let c = corpus_of("case2_anxiety");
        let pid = c.entries[0].patient_id().to_string();
        let log = vec![
            raised(&pid, rule_ids::TRANSIENT, Severity::Advisory, 720),
            raised(&pid, rule_ids::TRANSIENT, Severity::Advisory, 990),
            raised(&pid, rule_ids::HR_PERSISTENT_HIGH, Severity::HighSeverity, 700),
            raised(&pid, rule_ids::TRANSIENT, Severity::Advisory, 1500),
        ];
        let r = score(&log, &c).unwrap();
        assert_eq!(r.aggregate.true_positive, 1);
        assert_eq!(r.aggregate.duplicates, 1);
        assert_eq!(r.aggregate.false_positive, 2);
        assert_eq!(r.aggregate.false_negative, 0);
        assert_eq!(r.high_severity_false_positive, 1);
        assert_eq!(r.detection_latency_s, vec![120.0]);
    }

    #[test]
    fn tolerance_edges() {
        let c = corpus_of("case2_anxiety");
        let pid = c.entries[0].patient_id().to_string();
        let early = score(&[raised(&pid, rule_ids::TRANSIENT, Severity::Advisory, 570)], &c).unwrap();
        assert_eq!(early.aggregate.true_positive, 1);
        let too_early = score(&[raised(&pid, rule_ids::TRANSIENT, Severity::Advisory, 569)], &c).unwrap();
        assert_eq!(too_early.aggregate.true_positive, 0);
        assert_eq!(too_early.aggregate.false_negative, 1);
        assert_eq!(too_early.aggregate.false_positive, 1);
    }

    #[test]
    fn flags_deduplicate_open_and_close() {
        let c = corpus_of("stuck_sensor");
        let pid = c.entries[0].patient_id().to_string();
        let from = STREAM_EPOCH_MS + 600_000;
        let rec = |to| {
            TopicEvent::Flag(FlagRecord {
                flag: FlagKind::StuckValue,
                pid: pid.clone(),
                did: format!("{pid}-ox"),
                from,
                to,
                ch: vec![Channel::Spo2],
            })
        };
        let r = score(&[rec(None), rec(Some(from + 300_000))], &c).unwrap();
        assert_eq!(r.aggregate.true_positive, 1);
        assert_eq!(r.aggregate.duplicates, 0);
        assert!(r.is_clean());
    }

    #[test]
    fn suppressed_advisories_are_not_false_positives() {
        let c = corpus_of("recovery");
        let pid = c.entries[0].patient_id().to_string();
        let r = score(&[raised(&pid, rule_ids::INTEGRITY_SUPPRESSED, Severity::Advisory, 100)], &c).unwrap();
        assert_eq!(r.aggregate.suppressed, 1);
        assert_eq!(r.aggregate.false_positive, 0);
        assert_eq!(r.aggregate.true_negative, 0);
    }

    #[test]
    fn unknown_patient_is_mismatch() {
        let c = corpus_of("recovery");
        let err = score(&[raised("ghost", rule_ids::SPO2_PERSISTENT_LOW, Severity::HighSeverity, 1)], &c);
        assert_eq!(err.unwrap_err(), MismatchedCorpus("ghost".into()));
    }
}
