use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::domain::DataPoint;

use super::generate::generate;
use super::library::lookup;
use super::script::{GroundTruth, ScenarioScript};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown scenario {0}")]
pub struct UnknownScenario(pub String);

/// One simulated patient of a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMember {
    pub index: u64,
    pub seed: u64,
    /// The scenario script re-keyed to this patient.
    pub script: ScenarioScript,
    pub points: Vec<DataPoint>,
}

/// SplitMix64 finalizer; spreads nearby indices over the seed space.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    let mut z = base_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Re-keys `script` to patient `{scenario}-{index:05}` and, when `duration_s`
/// is given, truncates it or extends it by repeating its last segment.
pub fn instantiate(script: &ScenarioScript, index: u64, duration_s: Option<u32>) -> ScenarioScript {
    let mut s = script.clone();
    s.profile = s
        .profile
        .with_patient_id(format!("{}-{index:05}", script.scenario_id));
    if let Some(d) = duration_s {
        resize(&mut s, d);
    }
    s
}

fn resize(s: &mut ScenarioScript, duration_s: u32) {
    let last = s.segments.last().cloned().expect("scripts have segments");
    while s.duration_s() < duration_s {
        s.segments.push(last.clone());
    }
    let mut excess = s.duration_s() - duration_s;
    while excess > 0 {
        let seg = s.segments.last_mut().expect("non-empty");
        if seg.duration_s > excess {
            seg.duration_s -= excess;
            excess = 0;
        } else {
            excess -= seg.duration_s;
            s.segments.pop();
        }
    }
    s.events.retain(|e| e.at_s + e.kind.duration_s() <= duration_s);
    s.ground_truth = s
        .ground_truth
        .iter()
        .filter(|g| g.from_s < duration_s)
        .map(|g| GroundTruth {
            to_s: g.to_s.min(duration_s),
            ..g.clone()
        })
        .collect();
}

/// One stream per patient instance. Patients are numbered across the mix in
/// scenario-name order, and each stream is generated from its own derived
/// seed, so any member can be reproduced alone.
pub fn run_cohort(
    mix: &BTreeMap<String, usize>,
    duration_s: Option<u32>,
    base_seed: u64,
) -> Result<Vec<CohortMember>, UnknownScenario> {
    let mut plan = Vec::new();
    let mut index = 0u64;
    for (name, &count) in mix {
        let script = lookup(name).ok_or_else(|| UnknownScenario(name.clone()))?;
        for _ in 0..count {
            plan.push((index, instantiate(&script, index, duration_s)));
            index += 1;
        }
    }
    Ok(plan
        .into_par_iter()
        .map(|(index, script)| {
            let seed = derive_seed(base_seed, index);
            let points = generate(&script, seed).expect("library scripts are valid");
            CohortMember {
                index,
                seed,
                script,
                points,
            }
        })
        .collect())
}

/// Parses `name:count,name:count`.
pub fn parse_mix(spec: &str) -> Result<BTreeMap<String, usize>, String> {
    let mut mix = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, count) = part
            .split_once(':')
            .ok_or_else(|| format!("expected name:count, got {part:?}"))?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| format!("bad count in {part:?}"))?;
        *mix.entry(name.trim().to_string()).or_insert(0) += count;
    }
    Ok(mix)
}
