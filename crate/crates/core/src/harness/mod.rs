//! Synthetic yes/no benchmark, answer normalization, scoring, and the
//! prediction/trace file formats used to bring in external model outputs.

pub mod dataset;
pub mod eval;
pub mod metrics;
pub mod predictions;
pub mod protocol;
pub mod traces;

pub use dataset::{
    build_negative_instance, generate_synthetic_dataset, Division, GeneratorSpec, QaInstance,
    SyntheticDataset, TaskKind,
};
pub use eval::{evaluate, EvalOptions, Evaluation};
pub use metrics::{
    compute_metrics, f1_score, score_predictions, ConfusionCounts, EvalMetrics, PredictionRecord,
    ScoreReport,
};
pub use protocol::{apply_prompt_protocol, normalize_answer, normalize_option, Answer, Vocabulary};
pub use traces::{load_traces, save_traces, TraceRecord, TraceSet};
