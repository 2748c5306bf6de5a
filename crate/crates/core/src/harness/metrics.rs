//! Confusion counts, accuracy/precision/recall/F1 and per-division scoring.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::dataset::{Division, TaskKind};
use crate::harness::protocol::Answer;

/// Binary confusion counts with "yes" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Records one binary prediction. An invalid answer is counted as the
    /// wrong class for its gold label.
    pub fn record(&mut self, gold: Answer, predicted: Answer) {
        match (gold, predicted) {
            (Answer::Yes, Answer::Yes) => self.tp += 1,
            (Answer::Yes, _) => self.fn_ += 1,
            (_, Answer::No) => self.tn += 1,
            _ => self.fp += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Table-style metrics. `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Harmonic mean of precision and recall; undefined when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(counts: &ConfusionCounts) -> Result<EvalMetrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::Argument(
            "cannot compute metrics over zero instances".into(),
        ));
    }
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => f1_score(p, r),
        _ => None,
    };
    Ok(EvalMetrics {
        accuracy: (counts.tp + counts.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
    })
}

/// Binary confusion counts plus multiple-choice hits for one division.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub binary: ConfusionCounts,
    pub mc_correct: u64,
    pub mc_total: u64,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.binary.total() + self.mc_total
    }

    pub fn record(&mut self, record: &PredictionRecord) {
        match record.task_kind {
            TaskKind::Binary => self.binary.record(record.gold, record.predicted),
            TaskKind::MultipleChoice => {
                self.mc_total += 1;
                if record.predicted == record.gold {
                    self.mc_correct += 1;
                }
            }
        }
    }

    /// Accuracy over every scored record; precision, recall and F1 from the
    /// binary records only (undefined for multiple-choice-only tallies).
    pub fn metrics(&self) -> Result<EvalMetrics> {
        if self.total() == 0 {
            return Err(Error::Argument(
                "cannot compute metrics over zero instances".into(),
            ));
        }
        let accuracy =
            (self.binary.tp + self.binary.tn + self.mc_correct) as f64 / self.total() as f64;
        if self.binary.total() == 0 {
            return Ok(EvalMetrics {
                accuracy,
                precision: None,
                recall: None,
                f1: None,
            });
        }
        Ok(EvalMetrics {
            accuracy,
            ..compute_metrics(&self.binary)?
        })
    }
}

impl Add for Tally {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            binary: self.binary + o.binary,
            mc_correct: self.mc_correct + o.mc_correct,
            mc_total: self.mc_total + o.mc_total,
        }
    }
}

/// One scored answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub division: String,
    pub task_kind: TaskKind,
    pub gold: Answer,
    pub predicted: Answer,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted == self.gold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivisionScore {
    pub division: String,
    pub counts: Tally,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    /// Standard divisions first (adversarial, popular, random), then any
    /// others alphabetically. Divisions without records are omitted.
    pub divisions: Vec<DivisionScore>,
    pub total: DivisionScore,
    pub warnings: Vec<String>,
}

pub const TOTAL_LABEL: &str = "total";

fn division_rank(name: &str) -> (usize, String) {
    let pos = Division::ALL
        .iter()
        .position(|d| d.as_str() == name)
        .unwrap_or(Division::ALL.len());
    (pos, name.to_string())
}

/// Aggregates records per division and in total. Total counts are the
/// elementwise sum of the division counts.
pub fn score_predictions(records: &[PredictionRecord]) -> Result<ScoreReport> {
    let mut seen = HashSet::new();
    for (i, r) in records.iter().enumerate() {
        if !seen.insert(r.instance_id.as_str()) {
            return Err(Error::ingestion(
                "<predictions>",
                i + 1,
                "instance_id",
                format!("duplicate instance_id `{}`", r.instance_id),
            ));
        }
        if r.division == TOTAL_LABEL {
            return Err(Error::ingestion(
                "<predictions>",
                i + 1,
                "division",
                "`total` is reserved",
            ));
        }
    }
    if records.is_empty() {
        return Err(Error::Argument("no prediction records to score".into()));
    }
    let mut tallies: BTreeMap<(usize, String), Tally> = BTreeMap::new();
    for r in records {
        tallies
            .entry(division_rank(&r.division))
            .or_default()
            .record(r);
    }
    let mut warnings = Vec::new();
    let has_binary = records.iter().any(|r| r.task_kind == TaskKind::Binary);
    if has_binary {
        for d in Division::ALL {
            if !tallies.contains_key(&division_rank(d.as_str())) {
                warnings.push(format!("division `{d}` has no records"));
            }
        }
    }
    let mut total = Tally::default();
    let mut divisions = Vec::with_capacity(tallies.len());
    for ((_, name), tally) in tallies {
        total = total + tally;
        divisions.push(DivisionScore {
            division: name,
            counts: tally,
            metrics: tally.metrics()?,
        });
    }
    Ok(ScoreReport {
        divisions,
        total: DivisionScore {
            division: TOTAL_LABEL.to_string(),
            counts: total,
            metrics: total.metrics()?,
        },
        warnings,
    })
}

impl ScoreReport {
    pub fn rows(&self) -> impl Iterator<Item = &DivisionScore> {
        self.divisions.iter().chain(std::iter::once(&self.total))
    }

    /// Metrics rounded to three decimals, undefined values as `--`.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "--".to_string(), |x| format!("{x:.3}"));
        let mut out = String::from("division,accuracy,precision,recall,f1,n\n");
        for row in self.rows() {
            let m = &row.metrics;
            let _ = writeln!(
                out,
                "{},{:.3},{},{},{},{}",
                row.division,
                m.accuracy,
                fmt(m.precision),
                fmt(m.recall),
                fmt(m.f1),
                row.counts.total()
            );
        }
        out
    }
}
