//! Line-delimited prediction files produced by any model.
//!
//! One JSON object per line:
//! `{"instance_id", "division", "task_kind", "gold", "predicted_text"}`, plus
//! an optional `option_count` for multiple-choice lines (default 5).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::dataset::TaskKind;
use crate::harness::metrics::PredictionRecord;
use crate::harness::protocol::{normalize_answer, normalize_option, Answer, MAX_OPTIONS};
use crate::steering::field_of;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub instance_id: String,
    pub division: String,
    pub task_kind: TaskKind,
    pub gold: Answer,
    pub predicted_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_count: Option<u8>,
}

impl PredictionLine {
    pub fn to_record(&self) -> std::result::Result<PredictionRecord, String> {
        let predicted = match self.task_kind {
            TaskKind::Binary => {
                if !matches!(self.gold, Answer::Yes | Answer::No) {
                    return Err(format!(
                        "binary gold must be yes or no, got `{}`",
                        self.gold
                    ));
                }
                normalize_answer(&self.predicted_text)
            }
            TaskKind::MultipleChoice => {
                let n = self.option_count.unwrap_or(MAX_OPTIONS);
                if !(4..=MAX_OPTIONS).contains(&n) {
                    return Err(format!("option_count must be 4 or 5, got {n}"));
                }
                match self.gold {
                    Answer::Option(i) if i < n => {}
                    g => return Err(format!("multiple-choice gold `{g}` outside {n} options")),
                }
                normalize_option(&self.predicted_text, n)
            }
        };
        Ok(PredictionRecord {
            instance_id: self.instance_id.clone(),
            division: self.division.clone(),
            task_kind: self.task_kind,
            gold: self.gold,
            predicted,
        })
    }
}

pub fn write_prediction_file(path: impl AsRef<Path>, lines: &[PredictionLine]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for line in lines {
        text.push_str(&serde_json::to_string(line).expect("prediction line serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses and normalizes a prediction file. Blank lines are skipped.
pub fn read_prediction_file(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: PredictionLine = serde_json::from_str(raw)
            .map_err(|e| Error::ingestion(path, i + 1, field_of(&e.to_string()), e.to_string()))?;
        let record = line
            .to_record()
            .map_err(|m| Error::ingestion(path, i + 1, "gold", m))?;
        if !seen.insert(record.instance_id.clone()) {
            return Err(Error::ingestion(
                path,
                i + 1,
                "instance_id",
                format!("duplicate instance_id `{}`", record.instance_id),
            ));
        }
        out.push(record);
    }
    Ok(out)
}
