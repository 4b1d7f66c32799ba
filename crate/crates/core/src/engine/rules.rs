//! Window predicates behind the alarm rules.
//!
//! Every function here is pure over a time-ordered slice of data-points and
//! measures "trailing" spans back from the newest point in the slice. Sampling
//! is nominally 1 Hz, so a span of `window_s` seconds expects `window_s`
//! samples.

use crate::domain::{AlarmPolicy, Channel, DataPoint};

/// Lowest heart rate still treated as normal when counting abnormal signs.
pub const HR_NORMAL_LOW_BPM: f64 = 40.0;
/// Systolic pressure at or above which blood pressure counts as abnormal.
pub const SYSTOLIC_HIGH_MMHG: f64 = 140.0;
/// Diastolic pressure at or above which blood pressure counts as abnormal.
pub const DIASTOLIC_HIGH_MMHG: f64 = 90.0;
/// Minimum sample coverage for the trend rule.
pub const TREND_MIN_COVERAGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Below,
    Above,
}

impl Direction {
    pub fn violates(self, value: f64, threshold: f64) -> bool {
        match self {
            Direction::Below => value < threshold,
            Direction::Above => value > threshold,
        }
    }
}

/// The suffix of `window` inside the trailing `window_s` seconds, i.e. points
/// with `ts > newest - window_s * 1000`.
pub fn trailing(window: &[DataPoint], window_s: u32) -> &[DataPoint] {
    let Some(last) = window.last() else {
        return window;
    };
    let cutoff = last.timestamp_ms - i64::from(window_s) * 1000;
    let start = window.partition_point(|d| d.timestamp_ms <= cutoff);
    &window[start..]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistenceDetail {
    pub holds: bool,
    pub present: usize,
    pub coverage: f64,
    /// The present value closest to (or past) the threshold on the safe side;
    /// for a firing rule this is still a violating value.
    pub least_violating: Option<f64>,
}

pub fn persistence_detail(
    window: &[DataPoint],
    channel: Channel,
    threshold: f64,
    direction: Direction,
    window_s: u32,
    min_coverage: f64,
) -> PersistenceDetail {
    let span = trailing(window, window_s);
    let mut present = 0usize;
    let mut all_violate = true;
    let mut least: Option<f64> = None;
    for v in span.iter().filter_map(|d| d.value(channel)) {
        present += 1;
        all_violate &= direction.violates(v, threshold);
        least = Some(match (least, direction) {
            (None, _) => v,
            (Some(l), Direction::Below) => l.max(v),
            (Some(l), Direction::Above) => l.min(v),
        });
    }
    let coverage = (present as f64 / f64::from(window_s.max(1))).min(1.0);
    PersistenceDetail {
        holds: present > 0 && all_violate && coverage >= min_coverage,
        present,
        coverage,
        least_violating: least,
    }
}

/// True iff within the trailing `window_s` the channel has at least
/// `min_coverage` of the expected samples and every present sample violates
/// `threshold` in `direction`.
pub fn check_persistence(
    window: &[DataPoint],
    channel: Channel,
    threshold: f64,
    direction: Direction,
    window_s: u32,
    min_coverage: f64,
) -> bool {
    persistence_detail(window, channel, threshold, direction, window_s, min_coverage).holds
}

/// Ordinary least-squares slope of `(minutes, value)` pairs, or `None` with
/// fewer than two distinct timestamps.
pub fn ols_slope_per_minute(samples: &[(i64, f64)]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let t0 = samples[0].0;
    let n = samples.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(t, v) in samples {
        sx += (t - t0) as f64 / 60_000.0;
        sy += v;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(t, v) in samples {
        let dx = (t - t0) as f64 / 60_000.0 - mx;
        sxx += dx * dx;
        sxy += dx * (v - my);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendDetail {
    pub holds: bool,
    pub slope_per_min: Option<f64>,
    pub latest: Option<f64>,
    pub coverage: f64,
}

pub fn trend_detail(
    window: &[DataPoint],
    channel: Channel,
    slope_threshold: f64,
    upper_bound: f64,
    window_s: u32,
) -> TrendDetail {
    let span = trailing(window, window_s);
    let samples: Vec<(i64, f64)> = span
        .iter()
        .filter_map(|d| d.value(channel).map(|v| (d.timestamp_ms, v)))
        .collect();
    let coverage = (samples.len() as f64 / f64::from(window_s.max(1))).min(1.0);
    let slope = ols_slope_per_minute(&samples);
    let latest = samples.last().map(|s| s.1);
    let holds = coverage >= TREND_MIN_COVERAGE
        && slope.is_some_and(|s| s > slope_threshold)
        && latest.is_some_and(|v| v > upper_bound);
    TrendDetail {
        holds,
        slope_per_min: slope,
        latest,
        coverage,
    }
}

/// True iff the OLS slope over the trailing window exceeds `slope_threshold`
/// (units per minute), the latest value exceeds `upper_bound`, and at least
/// half the expected samples are present.
pub fn check_trend(
    window: &[DataPoint],
    channel: Channel,
    slope_threshold: f64,
    upper_bound: f64,
    window_s: u32,
) -> bool {
    trend_detail(window, channel, slope_threshold, upper_bound, window_s).holds
}

/// A vital sign counted by the transient-instability rule. Blood pressure is
/// one sign spanning two channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Spo2,
    Hr,
    Rr,
    Bp,
}

impl Sign {
    pub const ALL: [Sign; 4] = [Sign::Spo2, Sign::Hr, Sign::Rr, Sign::Bp];

    pub fn channels(self) -> &'static [Channel] {
        match self {
            Sign::Spo2 => &[Channel::Spo2],
            Sign::Hr => &[Channel::Hr],
            Sign::Rr => &[Channel::Rr],
            Sign::Bp => &[Channel::Sys, Channel::Dia],
        }
    }

    pub fn of_channel(channel: Channel) -> Option<Sign> {
        match channel {
            Channel::Spo2 => Some(Sign::Spo2),
            Channel::Hr => Some(Sign::Hr),
            Channel::Rr => Some(Sign::Rr),
            Channel::Sys | Channel::Dia => Some(Sign::Bp),
            Channel::Temp => None,
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Small set of [`Sign`]s.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct SignSet(u8);

impl SignSet {
    pub fn insert(&mut self, s: Sign) {
        self.0 |= s.bit();
    }

    pub fn contains(self, s: Sign) -> bool {
        self.0 & s.bit() != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Sign> {
        Sign::ALL.into_iter().filter(move |s| self.contains(*s))
    }

    pub fn channels(self) -> Vec<Channel> {
        self.iter().flat_map(|s| s.channels().iter().copied()).collect()
    }
}

/// Signs of `dp` outside their normal range under `policy`. Absent channels
/// are never abnormal.
pub fn abnormal_signs(dp: &DataPoint, policy: &AlarmPolicy) -> SignSet {
    let mut set = SignSet::default();
    let v = &dp.vitals;
    if v.spo2_percent.is_some_and(|x| x < policy.spo2_low_threshold_percent) {
        set.insert(Sign::Spo2);
    }
    if v
        .heart_rate_bpm
        .is_some_and(|x| x > policy.hr_high_threshold_bpm || x < HR_NORMAL_LOW_BPM)
    {
        set.insert(Sign::Hr);
    }
    if v
        .resp_rate_bpm
        .is_some_and(|x| x < policy.rr_normal_low() || x > policy.rr_normal_high())
    {
        set.insert(Sign::Rr);
    }
    if v.systolic_mmhg.is_some_and(|x| x >= SYSTOLIC_HIGH_MMHG)
        || v.diastolic_mmhg.is_some_and(|x| x >= DIASTOLIC_HIGH_MMHG)
    {
        set.insert(Sign::Bp);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DeviceMeta, VitalsSample};

    fn series(values: &[(i64, Option<f64>)], channel: Channel) -> Vec<DataPoint> {
        values
            .iter()
            .map(|&(t, v)| {
                let mut vitals = VitalsSample {
                    temp_celsius: Some(36.8),
                    ..Default::default()
                };
                vitals.set(channel, v);
                DataPoint {
                    patient_id: "p".into(),
                    device_id: "d".into(),
                    timestamp_ms: 1_000 + t * 1000,
                    vitals,
                    device_meta: DeviceMeta::default(),
                }
            })
            .collect()
    }

    fn constant(channel: Channel, v: f64, secs: i64) -> Vec<DataPoint> {
        series(&(0..secs).map(|t| (t, Some(v))).collect::<Vec<_>>(), channel)
    }

    /// Independent brute-force reading of the persistence predicate: walk the
    /// expected 1 Hz grid of the trailing window and count.
    fn brute_persistence(w: &[DataPoint], ch: Channel, thr: f64, below: bool, win: i64, cov: f64) -> bool {
        let last = w.last().unwrap().timestamp_ms;
        let mut present = 0;
        let mut ok = true;
        for k in 0..win {
            let t = last - k * 1000;
            if let Some(d) = w.iter().find(|d| d.timestamp_ms == t) {
                if let Some(v) = d.value(ch) {
                    present += 1;
                    ok &= if below { v < thr } else { v > thr };
                }
            }
        }
        present > 0 && ok && present as f64 / win as f64 >= cov
    }

    #[test]
    fn sixty_seconds_below_threshold_persists() {
        let w = constant(Channel::Spo2, 90.0, 60);
        assert!(brute_persistence(&w, Channel::Spo2, 92.0, true, 60, 0.8));
        assert!(check_persistence(&w, Channel::Spo2, 92.0, Direction::Below, 60, 0.8));
        // a fresh stream fires once 48 of the 60 expected samples (80%) are in
        let short = constant(Channel::Spo2, 90.0, 48);
        assert!(check_persistence(&short, Channel::Spo2, 92.0, Direction::Below, 60, 0.8));
        let shorter = constant(Channel::Spo2, 90.0, 47);
        assert!(!check_persistence(&shorter, Channel::Spo2, 92.0, Direction::Below, 60, 0.8));
        assert!(!brute_persistence(&shorter, Channel::Spo2, 92.0, true, 60, 0.8));
    }

    #[test]
    fn dip_then_recovery_fails() {
        let mut vals: Vec<(i64, Option<f64>)> = (0..10).map(|t| (t, Some(91.0))).collect();
        vals.extend((10..60).map(|t| (t, Some(96.0))));
        let w = series(&vals, Channel::Spo2);
        assert!(!brute_persistence(&w, Channel::Spo2, 92.0, true, 60, 0.8));
        assert!(!check_persistence(&w, Channel::Spo2, 92.0, Direction::Below, 60, 0.8));
    }

    #[test]
    fn absent_channel_never_persists() {
        let w = constant(Channel::Hr, 120.0, 120);
        assert!(!check_persistence(&w, Channel::Spo2, 92.0, Direction::Below, 60, 0.8));
        assert!(check_persistence(&w, Channel::Hr, 100.0, Direction::Above, 120, 0.8));
    }

    #[test]
    fn ols_slope_matches_closed_form() {
        // y = 16 + 0.02 t (t in seconds) is 1.2 per minute
        let s: Vec<(i64, f64)> = (0..600).map(|t| (t * 1000, 16.0 + 0.02 * t as f64)).collect();
        assert!((ols_slope_per_minute(&s).unwrap() - 1.2).abs() < 1e-9);
        assert!(ols_slope_per_minute(&s[..1]).is_none());
    }

    #[test]
    fn rr_ramp_to_28_trends() {
        // 16 -> 28 across 600 samples; the last sample is exactly 28
        let vals: Vec<_> = (0..600).map(|t| (t, Some(16.0 + 12.0 * t as f64 / 599.0))).collect();
        let w = series(&vals, Channel::Rr);
        let d = trend_detail(&w, Channel::Rr, 0.5, 20.0, 600);
        assert!(d.holds);
        // closed form: 12 / 599 per second * 60
        assert!((d.slope_per_min.unwrap() - 12.0 / 599.0 * 60.0).abs() < 1e-9);
    }

    #[test]
    fn flat_rr_no_trend() {
        let w = constant(Channel::Rr, 14.0, 600);
        let d = trend_detail(&w, Channel::Rr, 0.5, 20.0, 600);
        assert!(!d.holds);
        assert!(d.slope_per_min.unwrap().abs() < 1e-12);
    }

    #[test]
    fn slope_without_absolute_guard_fails() {
        // 12 -> 18 over 600 s is 0.6 per minute but stays in the normal band
        let vals: Vec<_> = (0..600).map(|t| (t, Some(12.0 + 6.0 * t as f64 / 599.0))).collect();
        let w = series(&vals, Channel::Rr);
        let d = trend_detail(&w, Channel::Rr, 0.5, 20.0, 600);
        assert!(d.slope_per_min.unwrap() > 0.5);
        assert!(!d.holds);
    }

    #[test]
    fn trend_needs_half_coverage() {
        let vals: Vec<_> = (0..600)
            .filter(|t| t % 3 == 0)
            .map(|t| (t, Some(16.0 + 0.02 * t as f64 + 5.0)))
            .collect();
        let w = series(&vals, Channel::Rr);
        assert!(!check_trend(&w, Channel::Rr, 0.5, 20.0, 600));
    }

    #[test]
    fn abnormal_sign_counting() {
        let p = AlarmPolicy::default();
        let mut d = constant(Channel::Hr, 130.0, 1).remove(0);
        d.vitals.systolic_mmhg = Some(150.0);
        d.vitals.diastolic_mmhg = Some(90.0);
        d.vitals.resp_rate_bpm = Some(35.0);
        d.vitals.spo2_percent = Some(97.0);
        let s = abnormal_signs(&d, &p);
        assert_eq!(s.len(), 3);
        assert!(!s.contains(Sign::Spo2));
        assert_eq!(s.channels(), vec![Channel::Hr, Channel::Rr, Channel::Sys, Channel::Dia]);
    }
}
