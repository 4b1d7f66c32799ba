#[path = "support/invariants.rs"]
mod invariants;

const CASES: u32 = 1000;

#[test]
fn watermark_is_monotone() {
    invariants::watermark_monotonicity(CASES).unwrap();
}

#[test]
fn alarm_state_machine_is_safe() {
    invariants::state_machine_safety(CASES).unwrap();
}

#[test]
fn stricter_threshold_alarms_no_later() {
    invariants::threshold_monotonicity(CASES).unwrap();
}

#[test]
fn evidence_reproduces_alarm() {
    invariants::evidence_sufficiency(CASES).unwrap();
}
