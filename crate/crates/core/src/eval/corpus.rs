use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_datapoint, DataPoint};
use crate::sim::{derive_seed, generate, scenario_library, NoiseSigmas, ScenarioScript};
use crate::wire::WireRecord;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt corpus: {0}")]
    Corrupt(String),
}

/// One labeled stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub script: ScenarioScript,
    pub seed: u64,
    pub points: Vec<DataPoint>,
}

impl CorpusEntry {
    pub fn generated(script: ScenarioScript, seed: u64) -> Result<Self, CorpusError> {
        let points = generate(&script, seed).map_err(|e| CorpusError::Corrupt(e.to_string()))?;
        Ok(Self { script, seed, points })
    }

    pub fn patient_id(&self) -> &str {
        self.script.profile.patient_id.as_str()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    script: ScenarioScript,
    #[serde(default)]
    seed: u64,
    /// Explicit stream; generated from `script` and `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    points: Option<Vec<WireRecord>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusFile {
    entries: Vec<EntryFile>,
}

impl Corpus {
    /// Every library scenario once. `noise` replaces each script's noise;
    /// seeds derive from `base_seed` and the entry index.
    pub fn library(noise: NoiseSigmas, base_seed: u64) -> Self {
        let scripts: Vec<_> = scenario_library().into_values().map(|s| s.with_noise(noise)).collect();
        Self::from_scripts(scripts, base_seed)
    }

    pub fn from_scripts(scripts: Vec<ScenarioScript>, base_seed: u64) -> Self {
        let entries = scripts
            .into_iter()
            .enumerate()
            .map(|(i, s)| CorpusEntry::generated(s, derive_seed(base_seed, i as u64)).expect("valid script"))
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, patient_id: &str) -> Option<&CorpusEntry> {
        self.entries.iter().find(|e| e.patient_id() == patient_id)
    }

    pub fn parse(json: &str) -> Result<Self, CorpusError> {
        let file: CorpusFile =
            serde_json::from_str(json).map_err(|e| CorpusError::Corrupt(e.to_string()))?;
        let mut entries = Vec::with_capacity(file.entries.len());
        for (i, e) in file.entries.into_iter().enumerate() {
            let entry = match e.points {
                None => CorpusEntry::generated(e.script, e.seed)?,
                Some(records) => {
                    e.script
                        .validate()
                        .map_err(|err| CorpusError::Corrupt(err.to_string()))?;
                    let points: Vec<DataPoint> = records.into_iter().map(DataPoint::from).collect();
                    CorpusEntry {
                        script: e.script,
                        seed: e.seed,
                        points,
                    }
                }
            };
            check_stream(&entry).map_err(|m| CorpusError::Corrupt(format!("entry {i}: {m}")))?;
            entries.push(entry);
        }
        let mut ids: Vec<&str> = entries.iter().map(|e| e.patient_id()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(CorpusError::Corrupt(format!("patient {} appears twice", w[0])));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw)
    }

    /// Serializes scripts and seeds only; streams regenerate on load.
    pub fn to_json(&self) -> String {
        let file = CorpusFile {
            entries: self
                .entries
                .iter()
                .map(|e| EntryFile {
                    script: e.script.clone(),
                    seed: e.seed,
                    points: None,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("corpus serializes")
    }
}

fn check_stream(e: &CorpusEntry) -> Result<(), String> {
    let pid = &e.script.profile.patient_id;
    let mut last = i64::MIN;
    for d in &e.points {
        if &d.patient_id != pid {
            return Err(format!("point for {} in stream of {pid}", d.patient_id));
        }
        if d.timestamp_ms <= last {
            return Err(format!("timestamps not increasing at {}", d.timestamp_ms));
        }
        validate_datapoint(d).map_err(|v| format!("point at {}: {}", d.timestamp_ms, v.code()))?;
        last = d.timestamp_ms;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_regenerates_streams() {
        let c = Corpus::library(NoiseSigmas::default(), 5);
        let back = Corpus::parse(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn corrupt_input_is_reported() {
        assert!(matches!(Corpus::parse("{"), Err(CorpusError::Corrupt(_))));
        let c = Corpus::library(NoiseSigmas::ZERO, 0);
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        let first = v["entries"][0].clone();
        v["entries"].as_array_mut().unwrap().push(first);
        assert!(matches!(Corpus::parse(&v.to_string()), Err(CorpusError::Corrupt(_))));
    }
}
