//! Labeled residual-state files.
//!
//! Version 1 layout, one JSON object per line:
//!
//! ```text
//! {"format":"avsteer-traces","version":1,"model_id":..,"num_layers":L,
//!  "hidden_dim":d,"layer_index_base":1,"channel":"main","records":N}
//! {"instance_id":..,"correctness":"correct"|"incorrect"|"unknown",
//!  "channel":..?, "extraction":[[d values] × L], "full":[[[d] × T] × L]?}
//! ...
//! ```
//!
//! `extraction` holds the state of every layer at the last input position.
//! `full` (optional) holds every processed position. Floats are written in
//! shortest round-trip form, so a save/load cycle is bit-exact. Models with
//! auxiliary branches tag their states with a channel other than `main`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Correctness, ResidualTrace, MAIN_CHANNEL};
use crate::steering::field_of;
use crate::tensor::Matrix;

const TRACE_FORMAT: &str = "avsteer-traces";
const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub instance_id: String,
    pub correctness: Correctness,
    pub channel: String,
    /// `L × d` states at the extraction position.
    pub extraction: Matrix,
    /// Optional per-layer `T × d` states for every position.
    pub full: Option<Vec<Matrix>>,
}

impl TraceRecord {
    pub fn from_trace(
        instance_id: impl Into<String>,
        trace: &ResidualTrace,
        keep_full: bool,
    ) -> Self {
        Self {
            instance_id: instance_id.into(),
            correctness: trace.correctness,
            channel: trace.channel.clone(),
            extraction: trace.extraction_states(),
            full: keep_full.then(|| trace.states.clone()),
        }
    }

    pub fn is_main_channel(&self) -> bool {
        self.channel == MAIN_CHANNEL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub model_id: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub channel: String,
    pub records: Vec<TraceRecord>,
}

impl TraceSet {
    pub fn new(model_id: impl Into<String>, num_layers: usize, hidden_dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            num_layers,
            hidden_dim,
            channel: MAIN_CHANNEL.to_string(),
            records: Vec::new(),
        }
    }

    /// Records captured off the main channel.
    pub fn non_main_records(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| !r.is_main_channel())
    }

    fn check(&self) -> Result<()> {
        for r in &self.records {
            if r.extraction.shape() != (self.num_layers, self.hidden_dim) {
                return Err(Error::Shape(format!(
                    "trace `{}` is {}x{}, set declares {}x{}",
                    r.instance_id,
                    r.extraction.rows(),
                    r.extraction.cols(),
                    self.num_layers,
                    self.hidden_dim
                )));
            }
            if let Some(full) = &r.full {
                if full.len() != self.num_layers
                    || full
                        .iter()
                        .any(|m| m.cols() != self.hidden_dim || m.rows() != full[0].rows())
                {
                    return Err(Error::Shape(format!(
                        "full trace of `{}` does not match {}x*x{}",
                        r.instance_id, self.num_layers, self.hidden_dim
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    model_id: String,
    num_layers: usize,
    hidden_dim: usize,
    layer_index_base: usize,
    channel: String,
    records: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    instance_id: String,
    correctness: Correctness,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel: Option<String>,
    extraction: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    full: Option<Vec<Vec<Vec<f64>>>>,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

pub fn save_traces(set: &TraceSet, path: impl AsRef<Path>) -> Result<()> {
    set.check()?;
    let path = path.as_ref();
    let header = Header {
        format: TRACE_FORMAT.into(),
        version: TRACE_VERSION,
        model_id: set.model_id.clone(),
        num_layers: set.num_layers,
        hidden_dim: set.hidden_dim,
        layer_index_base: 1,
        channel: set.channel.clone(),
        records: set.records.len(),
    };
    let mut text = serde_json::to_string(&header).expect("header serializes");
    text.push('\n');
    for r in &set.records {
        let line = Line {
            instance_id: r.instance_id.clone(),
            correctness: r.correctness,
            channel: (r.channel != set.channel).then(|| r.channel.clone()),
            extraction: rows_of(&r.extraction),
            full: r
                .full
                .as_ref()
                .map(|layers| layers.iter().map(rows_of).collect()),
        };
        text.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn matrix_at(
    path: &Path,
    line_no: usize,
    field: &str,
    rows: Vec<Vec<f64>>,
    num_rows: usize,
    cols: usize,
) -> Result<Matrix> {
    if rows.len() != num_rows {
        return Err(Error::ingestion(
            path,
            line_no,
            field,
            format!("expected {num_rows} rows, found {}", rows.len()),
        ));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::ingestion(
            path,
            line_no,
            field,
            format!("row {} has {} values, expected {cols}", i + 1, r.len()),
        ));
    }
    Matrix::from_rows(rows).map_err(|e| Error::ingestion(path, line_no, field, e.to_string()))
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<TraceSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::ingestion(path, 1, "header", "file is empty"))?;
    let header: Header = serde_json::from_str(first)
        .map_err(|e| Error::ingestion(path, 1, field_of(&e.to_string()), e.to_string()))?;
    if header.format != TRACE_FORMAT {
        return Err(Error::ingestion(
            path,
            1,
            "format",
            format!("unexpected `{}`", header.format),
        ));
    }
    if header.version != TRACE_VERSION {
        return Err(Error::ingestion(
            path,
            1,
            "version",
            format!("unsupported version {}", header.version),
        ));
    }
    if header.layer_index_base != 1 {
        return Err(Error::ingestion(
            path,
            1,
            "layer_index_base",
            format!("expected 1, found {}", header.layer_index_base),
        ));
    }
    let (num_layers, d) = (header.num_layers, header.hidden_dim);
    let mut records = Vec::with_capacity(header.records);
    for (i, raw) in lines {
        let line_no = i + 1;
        let line: Line = serde_json::from_str(raw).map_err(|e| {
            Error::ingestion(path, line_no, field_of(&e.to_string()), e.to_string())
        })?;
        let extraction = matrix_at(path, line_no, "extraction", line.extraction, num_layers, d)?;
        let full = match line.full {
            None => None,
            Some(layers) => {
                if layers.len() != num_layers {
                    return Err(Error::ingestion(
                        path,
                        line_no,
                        "full",
                        format!("expected {num_layers} layers, found {}", layers.len()),
                    ));
                }
                let positions = layers.first().map_or(0, Vec::len);
                Some(
                    layers
                        .into_iter()
                        .map(|rows| matrix_at(path, line_no, "full", rows, positions, d))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        };
        records.push(TraceRecord {
            instance_id: line.instance_id,
            correctness: line.correctness,
            channel: line.channel.unwrap_or_else(|| header.channel.clone()),
            extraction,
            full,
        });
    }
    if records.len() != header.records {
        return Err(Error::ingestion(
            path,
            text.lines().count() + 1,
            "records",
            format!(
                "truncated: header declares {} records, found {}",
                header.records,
                records.len()
            ),
        ));
    }
    Ok(TraceSet {
        model_id: header.model_id,
        num_layers,
        hidden_dim: d,
        channel: header.channel,
        records,
    })
}
