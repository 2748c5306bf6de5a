//! Subcommand implementations. Each returns the files it wrote and any
//! warnings; nothing is printed here.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{layer_influence_report, propose_partition, PartitionProposal};
use crate::cli::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::harness::dataset::{build_negative_instance, generate_synthetic_dataset, QaInstance};
use crate::harness::eval::{evaluate, valid_rate, EvalOptions};
use crate::harness::metrics::{score_predictions, ScoreReport};
use crate::harness::predictions::{read_prediction_file, write_prediction_file};
use crate::harness::protocol::Vocabulary;
use crate::harness::traces::{load_traces, save_traces, TraceRecord};
use crate::model::{ContrastivePair, Model};
use crate::steering::{extract_steering_vector, make_intervention, SteeringVector};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTOR_FILE: &str = "vector.json";
pub const INFLUENCE_FILE: &str = "layer_influence.csv";
pub const PARTITION_FILE: &str = "partition.json";

/// Files written and non-fatal warnings raised by one command.
#[derive(Debug, Default)]
pub struct CommandOutput {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>, out: &mut CommandOutput) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    out.written.push(path.to_path_buf());
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    seed: u64,
    spec: &'a crate::harness::dataset::GeneratorSpec,
    spec_sha256: String,
    dataset_file: &'static str,
    dataset_sha256: String,
    instance_count: usize,
}

fn dataset_jsonl(instances: &[QaInstance]) -> String {
    let mut text = String::new();
    for inst in instances {
        text.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        text.push('\n');
    }
    text
}

/// `gen-data`: writes the synthetic dataset and its manifest.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<CommandOutput> {
    let ds = generate_synthetic_dataset(&cfg.dataset, cfg.seed)?;
    ensure_dir(&cfg.output_dir)?;
    let mut out = CommandOutput::default();
    let body = dataset_jsonl(&ds.instances);
    let spec_json = serde_json::to_string(&cfg.dataset).expect("spec serializes");
    let manifest = Manifest {
        format: "avsteer-dataset",
        version: 1,
        seed: cfg.seed,
        spec: &cfg.dataset,
        spec_sha256: sha256_hex(spec_json.as_bytes()),
        dataset_file: DATASET_FILE,
        dataset_sha256: sha256_hex(body.as_bytes()),
        instance_count: ds.instances.len(),
    };
    write_file(&cfg.output_dir.join(DATASET_FILE), body, &mut out)?;
    write_file(
        &cfg.output_dir.join(MANIFEST_FILE),
        to_json(&manifest),
        &mut out,
    )?;
    Ok(out)
}

fn read_dataset(path: &Path) -> Result<Vec<QaInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let inst: QaInstance = serde_json::from_str(l).map_err(|e| {
                Error::ingestion(
                    path,
                    i + 1,
                    crate::steering::field_of(&e.to_string()),
                    e.to_string(),
                )
            })?;
            inst.validate()
                .map_err(|e| Error::ingestion(path, i + 1, "gold", e.to_string()))?;
            Ok(inst)
        })
        .collect()
}

/// Dataset from `output_dir` when `gen-data` has run, otherwise regenerated
/// from the config.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<QaInstance>> {
    let path = cfg.output_dir.join(DATASET_FILE);
    if path.exists() {
        read_dataset(&path)
    } else {
        Ok(generate_synthetic_dataset(&cfg.dataset, cfg.seed)?.instances)
    }
}

/// `extract`: steering vector from one instance against its silent copy.
pub fn cmd_extract(
    cfg: &RunConfig,
    instance_id: &str,
    vector_path: Option<&Path>,
) -> Result<CommandOutput> {
    let dataset = load_dataset(cfg)?;
    let inst = dataset
        .iter()
        .find(|i| i.instance_id == instance_id)
        .ok_or_else(|| Error::Lookup(format!("no instance `{instance_id}` in the dataset")))?;
    let model = cfg.build_model()?;
    let vocab = Vocabulary::standard();
    let negative = build_negative_instance(inst);
    let prompt = inst.prompt_tokens(&vocab)?;
    let pair = ContrastivePair::from_parts(inst.audio.clone(), negative.audio, prompt)?;
    let vector = extract_steering_vector(&model, &pair)?;
    let mut out = CommandOutput::default();
    if vector.is_zero() {
        out.warnings.push(format!(
            "instance `{instance_id}` has silent audio; the steering vector is all zeros"
        ));
    }
    let path = vector_path.map_or_else(|| cfg.output_dir.join(VECTOR_FILE), Path::to_path_buf);
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    vector.save(&path)?;
    out.written.push(path);
    Ok(out)
}

fn check_vector(model: &Model, vector: &SteeringVector, out: &mut CommandOutput) -> Result<()> {
    if vector.num_layers() != model.num_layers() || vector.hidden_dim() != model.hidden_dim() {
        return Err(Error::Shape(format!(
            "steering vector is {}x{}, model is {}x{}",
            vector.num_layers(),
            vector.hidden_dim(),
            model.num_layers(),
            model.hidden_dim()
        )));
    }
    if vector.model_id() != model.id() {
        out.warnings.push(format!(
            "steering vector was extracted from `{}`, evaluating `{}`",
            vector.model_id(),
            model.id()
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    model_id: &'a str,
    mode: &'static str,
    per_layer_strength: Option<&'a [f64]>,
    valid_answer_rate: f64,
    truncated: &'a [String],
    score: &'a ScoreReport,
}

pub fn metrics_path(dir: &Path, mode: Mode) -> PathBuf {
    dir.join(format!("metrics_{mode}.csv"))
}

pub fn traces_path(dir: &Path, mode: Mode) -> PathBuf {
    dir.join(format!("traces_{mode}.jsonl"))
}

/// `eval`: runs the benchmark in one steering mode.
pub fn cmd_eval(cfg: &RunConfig, mode: Mode, vector_path: Option<&Path>) -> Result<CommandOutput> {
    let mut out = CommandOutput::default();
    let model = cfg.build_model()?;
    let dataset = load_dataset(cfg)?;
    let schedule = cfg.schedule_for(mode)?;
    let plan = match &schedule {
        None => None,
        Some(schedule) => {
            let path =
                vector_path.map_or_else(|| cfg.output_dir.join(VECTOR_FILE), Path::to_path_buf);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "mode `{mode}` needs a steering vector, but {} does not exist (run `extract` or pass --vector)",
                    path.display()
                )));
            }
            let vector = SteeringVector::load(&path)?;
            check_vector(&model, &vector, &mut out)?;
            Some(make_intervention(&vector, schedule)?)
        }
    };
    let opts = EvalOptions {
        max_new_tokens: cfg.eval.max_new_tokens,
        keep_full_traces: cfg.eval.keep_full_traces,
    };
    let result = evaluate(
        &model,
        &Vocabulary::standard(),
        &dataset,
        plan.as_ref(),
        &opts,
    )?;
    out.warnings.extend(result.score.warnings.iter().cloned());
    if !result.truncated.is_empty() {
        out.warnings.push(format!(
            "{} instance(s) hit max_seq_len during generation",
            result.truncated.len()
        ));
    }
    let summary = EvalSummary {
        model_id: model.id(),
        mode: mode.as_str(),
        per_layer_strength: schedule.as_ref().map(|s| s.per_layer.as_slice()),
        valid_answer_rate: valid_rate(&result.records),
        truncated: &result.truncated,
        score: &result.score,
    };
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    write_file(&metrics_path(dir, mode), result.score.to_csv(), &mut out)?;
    write_file(
        &dir.join(format!("summary_{mode}.json")),
        to_json(&summary),
        &mut out,
    )?;
    let preds = dir.join(format!("predictions_{mode}.jsonl"));
    write_prediction_file(&preds, &result.lines)?;
    out.written.push(preds);
    let traces = traces_path(dir, mode);
    save_traces(&result.traces, &traces)?;
    out.written.push(traces);
    Ok(out)
}

/// `analyze`: per-layer influence CSV, optionally with a proposed partition.
pub fn cmd_analyze(
    cfg: &RunConfig,
    traces_path: &Path,
    vector_path: &Path,
    propose: bool,
) -> Result<(CommandOutput, Option<PartitionProposal>)> {
    let mut out = CommandOutput::default();
    let set = load_traces(traces_path)?;
    let vector = SteeringVector::load(vector_path)?;
    if set.num_layers != vector.num_layers() || set.hidden_dim != vector.hidden_dim() {
        return Err(Error::Shape(format!(
            "traces are {}x{}, steering vector is {}x{}",
            set.num_layers,
            set.hidden_dim,
            vector.num_layers(),
            vector.hidden_dim()
        )));
    }
    let skipped = set.non_main_records().count();
    if skipped > 0 {
        out.warnings.push(format!(
            "{skipped} trace(s) from a non-main channel excluded from the analysis"
        ));
    }
    let main: Vec<TraceRecord> = set
        .records
        .into_iter()
        .filter(TraceRecord::is_main_channel)
        .collect();
    let report = layer_influence_report(&main, &vector)?;
    if report.rows.iter().any(|r| r.effect_size_d.is_none()) {
        out.warnings
            .push("some layers have an undefined effect size".into());
    }
    ensure_dir(&cfg.output_dir)?;
    write_file(
        &cfg.output_dir.join(INFLUENCE_FILE),
        report.to_csv(),
        &mut out,
    )?;
    let proposal = if propose {
        let p = propose_partition(&report, 2)?;
        if p.fell_back {
            out.warnings.push(
                "effect sizes could not support a proposal; using the default partition".into(),
            );
        }
        write_file(&cfg.output_dir.join(PARTITION_FILE), to_json(&p), &mut out)?;
        Some(p)
    } else {
        None
    };
    Ok((out, proposal))
}

/// `report`: scores an external prediction file.
pub fn cmd_report(
    cfg: &RunConfig,
    predictions: Option<&Path>,
) -> Result<(CommandOutput, ScoreReport)> {
    let path = predictions
        .map(Path::to_path_buf)
        .or_else(|| cfg.report.predictions.clone())
        .ok_or_else(|| {
            Error::Config(
                "report needs a prediction file (--predictions or report.predictions)".into(),
            )
        })?;
    let records = read_prediction_file(&path)?;
    let score = score_predictions(&records)?;
    let mut out = CommandOutput {
        warnings: score.warnings.clone(),
        ..CommandOutput::default()
    };
    ensure_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("report.csv"), score.to_csv(), &mut out)?;
    write_file(
        &cfg.output_dir.join("report.json"),
        to_json(&score),
        &mut out,
    )?;
    Ok((out, score))
}
