use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
    /// Extra alarms matching an interval that was already matched.
    pub duplicates: u64,
    /// Alarms replaced by device advisories.
    pub suppressed: u64,
}

impl Counts {
    pub fn add(&mut self, o: &Counts) {
        self.true_positive += o.true_positive;
        self.false_positive += o.false_positive;
        self.false_negative += o.false_negative;
        self.true_negative += o.true_negative;
        self.duplicates += o.duplicates;
        self.suppressed += o.suppressed;
    }
}

/// Nearest-rank percentile of an ascending slice, `p` in (0, 100].
pub fn percentile<T: Copy>(sorted: &[T], p: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        match (s.first(), s.last()) {
            (Some(&min), Some(&max)) => Summary {
                n: s.len(),
                min,
                p50: percentile(&s, 50.0).expect("non-empty"),
                p95: percentile(&s, 95.0).expect("non-empty"),
                max,
            },
            _ => Summary::default(),
        }
    }
}

/// Scoring outcome. One true negative is counted per stream that has no
/// expected positives and produced no alarm or flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub aggregate: Counts,
    /// Keyed by rule id, or `flag:<kind>` for integrity flags.
    pub per_rule: BTreeMap<String, Counts>,
    pub per_scenario: BTreeMap<String, Counts>,
    /// False positives raised at high severity.
    pub high_severity_false_positive: u64,
    /// Trigger time minus interval start, seconds, per matched interval.
    pub detection_latency_s: Vec<f64>,
    pub detection_latency: Summary,
}

impl ConfusionReport {
    pub fn is_clean(&self) -> bool {
        self.aggregate.false_positive == 0 && self.aggregate.false_negative == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "TN counts one per stream with no expected positives and no output.");
        let _ = writeln!(s, "{:<36} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}", "", "TP", "FP", "FN", "TN", "dup", "supp");
        let row = |s: &mut String, name: &str, c: &Counts| {
            let _ = writeln!(
                s,
                "{:<36} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}",
                name, c.true_positive, c.false_positive, c.false_negative, c.true_negative, c.duplicates, c.suppressed
            );
        };
        for (k, c) in &self.per_rule {
            row(&mut s, k, c);
        }
        let _ = writeln!(s);
        for (k, c) in &self.per_scenario {
            row(&mut s, k, c);
        }
        let _ = writeln!(s);
        row(&mut s, "total", &self.aggregate);
        let d = &self.detection_latency;
        let _ = writeln!(
            s,
            "high-severity FP {}; detection latency s: n={} min={:.0} p50={:.0} p95={:.0} max={:.0}",
            self.high_severity_false_positive, d.n, d.min, d.p50, d.p95, d.max
        );
        s
    }
}

/// Bench outcome.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub patients: usize,
    pub duration_s: u32,
    /// Notification latency: consumer ack time minus transition creation.
    pub latency_ms: Vec<i64>,
    pub p50_ms: i64,
    pub p95_ms: i64,
    pub max_ms: i64,
    pub submitted: u64,
    pub acked: u64,
    pub rejected: u64,
    pub stale_rejections: u64,
    pub drops: u64,
    pub throughput_pps: f64,
}

impl LatencyReport {
    /// Fills percentiles and drop count from the raw fields.
    pub fn finish(mut self) -> Self {
        self.latency_ms.sort_unstable();
        self.p50_ms = percentile(&self.latency_ms, 50.0).unwrap_or(0);
        self.p95_ms = percentile(&self.latency_ms, 95.0).unwrap_or(0);
        self.max_ms = self.latency_ms.last().copied().unwrap_or(0);
        self.drops = self.submitted.saturating_sub(self.acked);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        format!(
            "patients {} for {} s\nsubmitted {} acked {} rejected {} stale {} drops {}\nthroughput {:.1} points/s\nnotification latency ms: n={} p50={} p95={} max={}\n",
            self.patients,
            self.duration_s,
            self.submitted,
            self.acked,
            self.rejected,
            self.stale_rejections,
            self.drops,
            self.throughput_pps,
            self.latency_ms.len(),
            self.p50_ms,
            self.p95_ms,
            self.max_ms,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<i64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), Some(50));
        assert_eq!(percentile(&v, 95.0), Some(95));
        assert_eq!(percentile(&v, 100.0), Some(100));
        assert_eq!(percentile(&[7], 95.0), Some(7));
        assert_eq!(percentile::<i64>(&[], 50.0), None);
    }

    proptest! {
        #[test]
        fn percentiles_are_ordered(mut v in proptest::collection::vec(0i64..10_000, 1..200)) {
            let r = LatencyReport { latency_ms: std::mem::take(&mut v), ..Default::default() }.finish();
            prop_assert!(0 <= r.p50_ms && r.p50_ms <= r.p95_ms && r.p95_ms <= r.max_ms);
        }
    }
}
