//! Versioned TOML run configuration.
//!
//! ```toml
//! version = 1
//! seed = 7
//! output_dir = "out"
//!
//! [model]            # every field optional; defaults shown in ModelSection
//! num_layers = 4
//! planted = true
//!
//! [schedule]
//! mode = "adaptive"  # default | uniform | adaptive
//! lambda = 0.05
//! beta = 0.5
//! increase_set = "auto"   # or an explicit list such as [2, 3]
//!
//! [dataset]          # synthetic generator
//! per_division = { adversarial = 40, popular = 40, random = 40 }
//!
//! [eval]
//! max_new_tokens = 2
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::dataset::GeneratorSpec;
use crate::model::{self, Model, ModelConfig};
use crate::steering::{
    adaptive_schedule, default_layer_partition, uniform_schedule, LayerPartition, SteeringSchedule,
    DEFAULT_BETA, DEFAULT_LAMBDA,
};
use crate::tensor;

pub const CONFIG_VERSION: u32 = 1;
const PLANTED_DIRECTION_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No steering.
    Default,
    Uniform,
    Adaptive,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Default => "default",
            Mode::Uniform => "uniform",
            Mode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "default" => Ok(Mode::Default),
        "uniform" => Ok(Mode::Uniform),
        "adaptive" => Ok(Mode::Adaptive),
        other => Err(Error::Config(format!(
            "mode `{other}` is not one of default, uniform, adaptive"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub audio_feature_dim: usize,
    pub max_seq_len: usize,
    pub norm_epsilon: f64,
    /// Defaults to the top-level seed.
    pub rng_seed: Option<u64>,
    /// Replace the random unembedding with a planted yes/no readout along a
    /// seeded unit direction, so answers are always yes or no.
    pub planted: bool,
    pub planted_gain: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::default();
        Self {
            num_layers: c.num_layers,
            hidden_dim: c.hidden_dim,
            num_heads: c.num_heads,
            head_dim: c.head_dim,
            vocab_size: c.vocab_size,
            audio_feature_dim: c.audio_feature_dim,
            max_seq_len: c.max_seq_len,
            norm_epsilon: c.norm_epsilon,
            rng_seed: None,
            planted: true,
            planted_gain: model::PLANTED_GAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IncreaseSet {
    Keyword(String),
    Layers(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub mode: Mode,
    pub lambda: f64,
    pub beta: f64,
    pub increase_set: IncreaseSet,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            mode: Mode::Adaptive,
            lambda: DEFAULT_LAMBDA,
            beta: DEFAULT_BETA,
            increase_set: IncreaseSet::Keyword("auto".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub max_new_tokens: usize,
    pub keep_full_traces: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            max_new_tokens: 2,
            keep_full_traces: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// External prediction file scored by `report`.
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub dataset: GeneratorSpec,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub report: ReportSection,
}

impl RunConfig {
    pub fn new(seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed,
            output_dir: output_dir.into(),
            model: ModelSection::default(),
            schedule: ScheduleSection::default(),
            dataset: GeneratorSpec::default(),
            eval: EvalSection::default(),
            report: ReportSection::default(),
        }
    }

    /// Reads and validates a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(p) = cfg.report.predictions.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version = {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.model_config().validate()?;
        if self.model.planted
            && !(self.model.planted_gain > 0.0 && self.model.planted_gain.is_finite())
        {
            return Err(Error::Config("model.planted_gain must be positive".into()));
        }
        self.dataset.validate().map_err(|e| {
            Error::Config(format!(
                "dataset.{}",
                e.to_string().trim_start_matches("configuration error: ")
            ))
        })?;
        if self.dataset.feature_dim != self.model.audio_feature_dim {
            return Err(Error::Config(format!(
                "dataset.feature_dim ({}) must equal model.audio_feature_dim ({})",
                self.dataset.feature_dim, self.model.audio_feature_dim
            )));
        }
        if self.eval.max_new_tokens < 1 {
            return Err(Error::Config(
                "eval.max_new_tokens must be at least 1".into(),
            ));
        }
        if let IncreaseSet::Keyword(k) = &self.schedule.increase_set {
            if k != "auto" {
                return Err(Error::Config(format!(
                    "schedule.increase_set must be \"auto\" or a list of layers, got \"{k}\""
                )));
            }
        }
        if !(self.schedule.lambda >= 0.0 && self.schedule.lambda.is_finite()) {
            return Err(Error::Config(
                "schedule.lambda must be finite and ≥ 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.schedule.beta) {
            return Err(Error::Config("schedule.beta must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            num_layers: m.num_layers,
            hidden_dim: m.hidden_dim,
            num_heads: m.num_heads,
            head_dim: m.head_dim,
            vocab_size: m.vocab_size,
            audio_feature_dim: m.audio_feature_dim,
            max_seq_len: m.max_seq_len,
            norm_epsilon: m.norm_epsilon,
            rng_seed: m.rng_seed.unwrap_or(self.seed),
        }
    }

    pub fn build_model(&self) -> Result<Model> {
        let config = self.model_config();
        if !self.model.planted {
            return model::init_model(&config);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(PLANTED_DIRECTION_STREAM);
        let mut dir: Vec<f64> = (0..config.hidden_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = tensor::l2_norm(&dir);
        dir.iter_mut().for_each(|x| *x /= norm);
        model::build_planted_model_with_gain(&config, &dir, self.model.planted_gain)
    }

    /// Schedule for `mode`; `None` means no steering.
    pub fn schedule_for(&self, mode: Mode) -> Result<Option<SteeringSchedule>> {
        let l = self.model.num_layers;
        let s = &self.schedule;
        match mode {
            Mode::Default => Ok(None),
            Mode::Uniform => uniform_schedule(s.lambda, l).map(Some),
            Mode::Adaptive => {
                let partition = match &s.increase_set {
                    IncreaseSet::Keyword(_) => default_layer_partition(l)?,
                    IncreaseSet::Layers(layers) => {
                        LayerPartition::from_increase(layers.iter().copied(), l)?
                    }
                };
                adaptive_schedule(s.lambda, s.beta, &partition, l).map(Some)
            }
        }
    }
}
