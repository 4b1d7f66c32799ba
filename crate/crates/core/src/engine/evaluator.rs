use std::fmt::Debug;

use crate::domain::{AlarmPolicy, Channel, DataPoint, RuleTraceEntry, Severity, TraceOutcome};

use super::rule_ids;
use super::rules::{persistence_detail, trailing, trend_detail, Direction};

/// Outcome of one rule at the newest point of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub rule_id: &'static str,
    pub holds: bool,
    pub severity: Severity,
    pub channels: Vec<Channel>,
    /// Span of the trailing window the rule looked at.
    pub window_s: u32,
    pub trace: Vec<RuleTraceEntry>,
}

/// Point-in-time alarm conditions over a patient's window.
///
/// The engine owns alarm lifecycle, episode tracking and masking; an evaluator
/// only reports which conditions hold. Implementations must be deterministic.
pub trait ConditionEvaluator: Send + Sync + Debug {
    /// Every condition this evaluator knows, holding or not, at the newest
    /// point of `window`. Rule ids must be stable across calls.
    fn evaluate(&self, window: &[DataPoint], policy: &AlarmPolicy) -> Vec<Finding>;
}

/// The deterministic threshold rules: SpO2 and heart-rate persistence and the
/// respiratory-rate trend.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleEvaluator;

impl RuleEvaluator {
    fn persistence(
        window: &[DataPoint],
        rule_id: &'static str,
        channel: Channel,
        threshold: f64,
        direction: Direction,
        window_s: u32,
        min_coverage: f64,
    ) -> Finding {
        let d = persistence_detail(window, channel, threshold, direction, window_s, min_coverage);
        let mut trace = vec![RuleTraceEntry::new(
            rule_id,
            d.least_violating.unwrap_or(f64::NAN),
            threshold,
            if d.holds { TraceOutcome::Violated } else { TraceOutcome::Passed },
        )
        .with_detail(format!("{} samples over {window_s} s", d.present))];
        trace.push(
            RuleTraceEntry::new(
                format!("{rule_id}.coverage"),
                d.coverage,
                min_coverage,
                if d.coverage >= min_coverage { TraceOutcome::Passed } else { TraceOutcome::Note },
            ),
        );
        Finding {
            rule_id,
            holds: d.holds,
            severity: Severity::HighSeverity,
            channels: vec![channel],
            window_s,
            trace,
        }
    }
}

impl ConditionEvaluator for RuleEvaluator {
    fn evaluate(&self, window: &[DataPoint], policy: &AlarmPolicy) -> Vec<Finding> {
        let spo2 = Self::persistence(
            window,
            rule_ids::SPO2_PERSISTENT_LOW,
            Channel::Spo2,
            policy.spo2_low_threshold_percent,
            Direction::Below,
            policy.spo2_persistence_window_s,
            policy.spo2_min_coverage_fraction,
        );
        let mut hr = Self::persistence(
            window,
            rule_ids::HR_PERSISTENT_HIGH,
            Channel::Hr,
            policy.hr_high_threshold_bpm,
            Direction::Above,
            policy.hr_persistence_window_s,
            policy.spo2_min_coverage_fraction,
        );
        hr.trace.push(
            RuleTraceEntry::new(rule_ids::HR_PERSISTENT_HIGH, f64::NAN, f64::NAN, TraceOutcome::Note)
                .with_detail("low_confidence: clinical weight of elevated heart rate is unestablished"),
        );

        let upper = policy.rr_normal_high();
        let t = trend_detail(
            window,
            Channel::Rr,
            policy.rr_trend_slope_threshold,
            upper,
            policy.rr_trend_window_s,
        );
        let rr = Finding {
            rule_id: rule_ids::RR_TREND_HIGH,
            holds: t.holds,
            severity: Severity::HighSeverity,
            channels: vec![Channel::Rr],
            window_s: policy.rr_trend_window_s,
            trace: vec![
                RuleTraceEntry::new(
                    rule_ids::RR_TREND_HIGH,
                    t.slope_per_min.unwrap_or(f64::NAN),
                    policy.rr_trend_slope_threshold,
                    if t.holds { TraceOutcome::Violated } else { TraceOutcome::Passed },
                )
                .with_detail("ols slope per minute"),
                RuleTraceEntry::new(
                    format!("{}.latest", rule_ids::RR_TREND_HIGH),
                    t.latest.unwrap_or(f64::NAN),
                    upper,
                    TraceOutcome::Note,
                ),
                RuleTraceEntry::new(
                    format!("{}.coverage", rule_ids::RR_TREND_HIGH),
                    t.coverage,
                    super::rules::TREND_MIN_COVERAGE,
                    TraceOutcome::Note,
                ),
            ],
        };
        vec![spo2, hr, rr]
    }
}

/// The slice of `window` a finding rests on.
pub fn evidence_span<'a>(window: &'a [DataPoint], finding: &Finding) -> &'a [DataPoint] {
    trailing(window, finding.window_s)
}
