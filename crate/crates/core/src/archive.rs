//! The source-task archive and its on-disk format.
//!
//! The archive is a versioned JSON document. Each record carries a SHA-256
//! checksum of its compact serialization; floats are written in shortest
//! round-trip form, so save -> load -> save reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedder::{Embedder, TaskState};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::types::{Bounds, EvaluatedSolution};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    /// Optimizer mode that produced the dataset.
    pub mode: String,
    pub seed: u64,
    pub evaluations: usize,
}

/// One solved task: its state, every true evaluation, and the surrogate
/// trained on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub state: TaskState,
    pub bounds: Bounds,
    pub data: Vec<EvaluatedSolution>,
    pub model: Option<GpModel>,
    pub meta: RecordMeta,
}

/// Archived tasks in insertion order, plus the embedder used to compare
/// task states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceArchive {
    pub embedder: Option<Embedder>,
    pub records: Vec<TaskRecord>,
}

#[derive(Serialize, Deserialize)]
struct StoredRecord {
    checksum: String,
    record: TaskRecord,
}

#[derive(Serialize, Deserialize)]
struct StoredArchive {
    format_version: u32,
    embedder: Option<Embedder>,
    records: Vec<StoredRecord>,
}

fn checksum(record: &TaskRecord) -> Result<String> {
    let bytes = serde_json::to_vec(record)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl SourceArchive {
    pub fn new(embedder: Option<Embedder>) -> Self {
        SourceArchive {
            embedder,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TaskRecord) {
        self.records.push(record);
    }

    pub fn get(&self, id: &str) -> Option<&TaskRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        let stored = StoredArchive {
            format_version: FORMAT_VERSION,
            embedder: self.embedder.clone(),
            records: self
                .records
                .iter()
                .map(|r| {
                    Ok(StoredRecord {
                        checksum: checksum(r)?,
                        record: r.clone(),
                    })
                })
                .collect::<Result<_>>()?,
        };
        let mut s = serde_json::to_string_pretty(&stored)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::usage("archive has no format_version"))?;
        if version != FORMAT_VERSION as u64 {
            return Err(Error::Migration {
                found: version as u32,
                expected: FORMAT_VERSION,
            });
        }
        let stored: StoredArchive = serde_json::from_value(value)?;
        let mut records = Vec::with_capacity(stored.records.len());
        for s in stored.records {
            if checksum(&s.record)? != s.checksum {
                return Err(Error::Checksum { id: s.record.id });
            }
            s.record.state.validate()?;
            records.push(s.record);
        }
        Ok(SourceArchive {
            embedder: stored.embedder,
            records,
        })
    }
}

pub fn save_archive(archive: &SourceArchive, path: &Path) -> Result<()> {
    let text = archive.to_json()?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<SourceArchive> {
    SourceArchive::from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Surrogate;
    use crate::types::{DecisionVector, ObjectiveVector};

    fn record(id: &str) -> TaskRecord {
        let bounds = Bounds::unit(2);
        let data: Vec<EvaluatedSolution> = (0..6)
            .map(|i| {
                let x = vec![i as f64 / 6.0, (i as f64 * 0.37) % 1.0];
                EvaluatedSolution {
                    objectives: ObjectiveVector(vec![x[0] + x[1], 1.0 - x[0] * x[1]]),
                    decision: DecisionVector(x),
                    eval_index: i + 1,
                    task_id: id.into(),
                }
            })
            .collect();
        let model = crate::gp::train_gp(&data, &bounds).unwrap();
        TaskRecord {
            id: id.into(),
            state: TaskState::new(1, 1, 2, vec![vec![0.1, 0.2]]).unwrap(),
            bounds,
            data,
            model: Some(model),
            meta: RecordMeta {
                mode: "baseline".into(),
                seed: 1,
                evaluations: 6,
            },
        }
    }

    #[test]
    fn empty_round_trip() {
        let a = SourceArchive::default();
        let text = a.to_json().unwrap();
        let b = SourceArchive::from_json(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(text, b.to_json().unwrap());
    }

    #[test]
    fn round_trip_is_byte_identical_and_preserves_predictions() {
        let mut a = SourceArchive::default();
        a.push(record("s0"));
        a.push(record("s1"));
        let text = a.to_json().unwrap();
        let b = SourceArchive::from_json(&text).unwrap();
        assert_eq!(text, b.to_json().unwrap());
        let (ma, mb) = (a.records[0].model.as_ref().unwrap(), b.records[0].model.as_ref().unwrap());
        for q in [[0.3, 0.3], [0.9, 0.1]] {
            assert_eq!(ma.predict(&q).unwrap(), mb.predict(&q).unwrap());
        }
    }

    #[test]
    fn version_mismatch_needs_migration() {
        let text = SourceArchive::default().to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 7");
        assert!(matches!(
            SourceArchive::from_json(&text),
            Err(Error::Migration { found: 7, .. })
        ));
    }

    #[test]
    fn corruption_fails_checksum() {
        let mut a = SourceArchive::default();
        a.push(record("s0"));
        let text = a.to_json().unwrap().replace("\"eval_index\": 3", "\"eval_index\": 4");
        assert!(matches!(SourceArchive::from_json(&text), Err(Error::Checksum { .. })));
    }
}
