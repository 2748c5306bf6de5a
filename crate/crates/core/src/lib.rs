//! # avsteer
//!
//! Adaptive vector steering on a tiny, fully deterministic decoder-only
//! transformer with an audio-feature prefix.
//!
//! * [`model`]: the testbed transformer with per-layer residual read-out and
//!   intervention points.
//! * [`steering`]: contrastive steering vectors (real audio minus silence),
//!   uniform and budget-preserving adaptive per-layer schedules, and
//!   norm-preserving injection.
//! * [`analysis`]: per-layer cosine similarity split by answer correctness,
//!   Cohen's d, and a layer-partition proposal.
//! * [`harness`]: synthetic yes/no benchmark, answer normalization, metrics,
//!   and prediction/trace file formats.
//! * [`cli`]: config-driven pipeline behind the `avsteer` binary.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod harness;
pub mod model;
pub mod steering;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use model::{
    build_planted_model, init_model, AudioFeatureSequence, ContrastivePair, Correctness, Model,
    ModelConfig, PromptTokens, ResidualTrace,
};
pub use steering::{
    adaptive_schedule, default_layer_partition, extract_steering_vector, inject, make_intervention,
    uniform_schedule, InterventionPlan, LayerPartition, SteeringSchedule, SteeringVector,
};
