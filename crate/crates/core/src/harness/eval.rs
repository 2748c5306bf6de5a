//! Runs the tiny model over a dataset and scores it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::dataset::{QaInstance, TaskKind};
use crate::harness::metrics::{score_predictions, PredictionRecord, ScoreReport};
use crate::harness::predictions::PredictionLine;
use crate::harness::protocol::{
    normalize_answer, normalize_option, Answer, Vocabulary, MAX_OPTIONS,
};
use crate::harness::traces::{TraceRecord, TraceSet};
use crate::model::{Correctness, Model};
use crate::steering::InterventionPlan;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub max_new_tokens: usize,
    /// Keep every position of each trace, not just the extraction position.
    pub keep_full_traces: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 2,
            keep_full_traces: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<PredictionRecord>,
    /// Raw outputs in prediction-file form, in dataset order.
    pub lines: Vec<PredictionLine>,
    pub score: ScoreReport,
    pub traces: TraceSet,
    /// Instances whose generation hit the context limit.
    pub truncated: Vec<String>,
}

struct Outcome {
    record: PredictionRecord,
    line: PredictionLine,
    trace: TraceRecord,
    truncated: bool,
}

fn run_instance(
    model: &Model,
    vocab: &Vocabulary,
    inst: &QaInstance,
    plan: Option<&InterventionPlan>,
    opts: &EvalOptions,
) -> Result<Outcome> {
    inst.validate()?;
    let prompt = inst.prompt_tokens(vocab)?;
    let out = model.greedy_decode(&inst.audio, &prompt, plan, opts.max_new_tokens)?;
    let text = vocab.decode(&out.tokens);
    let predicted = match inst.task_kind {
        TaskKind::Binary => normalize_answer(&text),
        TaskKind::MultipleChoice => {
            normalize_option(&text, inst.option_count.unwrap_or(MAX_OPTIONS))
        }
    };
    let record = PredictionRecord {
        instance_id: inst.instance_id.clone(),
        division: inst.division_label().to_string(),
        task_kind: inst.task_kind,
        gold: inst.gold,
        predicted,
    };
    let mut trace = out.prompt_trace;
    trace.correctness = if record.is_correct() {
        Correctness::Correct
    } else {
        Correctness::Incorrect
    };
    Ok(Outcome {
        line: PredictionLine {
            instance_id: inst.instance_id.clone(),
            division: record.division.clone(),
            task_kind: inst.task_kind,
            gold: inst.gold,
            predicted_text: text,
            option_count: inst.option_count,
        },
        trace: TraceRecord::from_trace(&inst.instance_id, &trace, opts.keep_full_traces),
        record,
        truncated: out.truncated,
    })
}

/// Decodes each instance under the prompt protocol, normalizes the answer,
/// labels its trace and aggregates per division and in total. Instances are
/// processed in parallel; results keep dataset order.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &[QaInstance],
    intervention: Option<&InterventionPlan>,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Argument("dataset is empty".into()));
    }
    if model.config().vocab_size < vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} is smaller than the benchmark vocabulary ({} words)",
            model.config().vocab_size,
            vocab.len()
        )));
    }
    let outcomes: Vec<Outcome> = dataset
        .par_iter()
        .map(|inst| {
            run_instance(model, vocab, inst, intervention, opts).map_err(|e| Error::Instance {
                id: inst.instance_id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut traces = TraceSet::new(model.id(), model.num_layers(), model.hidden_dim());
    let mut records = Vec::with_capacity(outcomes.len());
    let mut lines = Vec::with_capacity(outcomes.len());
    let mut truncated = Vec::new();
    for o in outcomes {
        if o.truncated {
            truncated.push(o.record.instance_id.clone());
        }
        records.push(o.record);
        lines.push(o.line);
        traces.records.push(o.trace);
    }
    let score = score_predictions(&records)?;
    Ok(Evaluation {
        records,
        lines,
        score,
        traces,
        truncated,
    })
}

/// Fraction of binary predictions that conform to yes/no.
pub fn valid_rate(records: &[PredictionRecord]) -> f64 {
    let valid = records
        .iter()
        .filter(|r| r.predicted != Answer::Invalid)
        .count();
    valid as f64 / records.len().max(1) as f64
}
