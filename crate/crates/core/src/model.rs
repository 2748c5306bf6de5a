//! A small deterministic decoder-only transformer with an audio-feature prefix.
//!
//! The input sequence is `[projected audio frames ∥ embedded prompt tokens]`
//! plus a learned absolute position embedding. Each block is pre-norm:
//!
//! ```text
//! x = x + Attn(RmsNorm(x))
//! x = x + Mlp(RmsNorm(x))
//! x = steer(x)            // only at designated positions, when a plan is given
//! ```
//!
//! The residual stream after each block (post-intervention) is recorded in a
//! [`ResidualTrace`]. Parameters are drawn uniformly from `[-0.05, 0.05]` by a
//! ChaCha8 generator seeded with `ModelConfig::rng_seed`, so a config always
//! produces bit-identical weights on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::steering::InterventionPlan;
use crate::tensor::{self, Matrix};

/// Reserved end-of-sequence token.
pub const EOS_TOKEN: u32 = 0;
/// Reserved answer token for "yes".
pub const YES_TOKEN: u32 = 1;
/// Reserved answer token for "no".
pub const NO_TOKEN: u32 = 2;
/// First multiple-choice option token ("A"); options occupy consecutive ids.
pub const FIRST_OPTION_TOKEN: u32 = 3;

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.05;
/// Default logit gain `c` of [`build_planted_model`].
pub const PLANTED_GAIN: f64 = 10.0;

const MLP_EXPANSION: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub audio_feature_dim: usize,
    pub max_seq_len: usize,
    pub norm_epsilon: f64,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            hidden_dim: 32,
            num_heads: 4,
            head_dim: 8,
            vocab_size: 64,
            audio_feature_dim: 16,
            max_seq_len: 64,
            norm_epsilon: 1e-5,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        if self.num_heads < 1 || self.head_dim < 1 {
            return Err(Error::Config(
                "num_heads and head_dim must be at least 1".into(),
            ));
        }
        if self.hidden_dim != self.num_heads * self.head_dim {
            return Err(Error::Config(format!(
                "hidden_dim ({}) must equal num_heads × head_dim ({} × {} = {})",
                self.hidden_dim,
                self.num_heads,
                self.head_dim,
                self.num_heads * self.head_dim
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab_size ({}) must be at least 4",
                self.vocab_size
            )));
        }
        if self.audio_feature_dim < 1 {
            return Err(Error::Config("audio_feature_dim must be at least 1".into()));
        }
        if self.max_seq_len < 1 {
            return Err(Error::Config("max_seq_len must be at least 1".into()));
        }
        if !(self.norm_epsilon > 0.0 && self.norm_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "norm_epsilon ({}) must be a small positive real",
                self.norm_epsilon
            )));
        }
        Ok(())
    }

    /// Stable identifier written into vector and trace files.
    pub fn model_id(&self) -> String {
        format!(
            "tiny-L{}-d{}-h{}-v{}-a{}-s{}",
            self.num_layers,
            self.hidden_dim,
            self.num_heads,
            self.vocab_size,
            self.audio_feature_dim,
            self.rng_seed
        )
    }
}

/// Ordered audio feature frames of a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioFeatureSequence {
    feature_dim: usize,
    frames: Vec<Vec<f64>>,
}

impl AudioFeatureSequence {
    pub fn new(feature_dim: usize, frames: Vec<Vec<f64>>) -> Result<Self> {
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.len() != feature_dim)
        {
            return Err(Error::Shape(format!(
                "audio frame {i} has {} features, expected {feature_dim}",
                f.len()
            )));
        }
        Ok(Self {
            feature_dim,
            frames,
        })
    }

    /// All-zero frames: the silent counterpart of any clip of this length.
    pub fn silence(feature_dim: usize, frame_count: usize) -> Self {
        Self {
            feature_dim,
            frames: vec![vec![0.0; feature_dim]; frame_count],
        }
    }

    pub fn silent_like(&self) -> Self {
        Self::silence(self.feature_dim, self.frame_count())
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn is_silent(&self) -> bool {
        self.frames.iter().flatten().all(|v| *v == 0.0)
    }
}

/// Non-empty list of vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTokens(Vec<u32>);

impl PromptTokens {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Argument(
                "prompt must contain at least one token".into(),
            ));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Real-audio input and its silent counterpart, sharing one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastivePair {
    positive: AudioFeatureSequence,
    negative: AudioFeatureSequence,
    prompt: PromptTokens,
}

impl ContrastivePair {
    /// Pairs `audio` with all-zero frames of the same length.
    pub fn new(audio: AudioFeatureSequence, prompt: PromptTokens) -> Self {
        let negative = audio.silent_like();
        Self {
            positive: audio,
            negative,
            prompt,
        }
    }

    /// Builds a pair from explicit sides, checking that the negative side is
    /// silent and matches the positive side's shape.
    pub fn from_parts(
        positive: AudioFeatureSequence,
        negative: AudioFeatureSequence,
        prompt: PromptTokens,
    ) -> Result<Self> {
        if positive.frame_count() != negative.frame_count()
            || positive.feature_dim() != negative.feature_dim()
        {
            return Err(Error::Shape(format!(
                "contrastive sides differ in shape: {}x{} vs {}x{}",
                positive.frame_count(),
                positive.feature_dim(),
                negative.frame_count(),
                negative.feature_dim()
            )));
        }
        if !negative.is_silent() {
            return Err(Error::Argument(
                "negative side must be all-zero frames".into(),
            ));
        }
        Ok(Self {
            positive,
            negative,
            prompt,
        })
    }

    pub fn positive(&self) -> (&AudioFeatureSequence, &PromptTokens) {
        (&self.positive, &self.prompt)
    }

    pub fn negative(&self) -> (&AudioFeatureSequence, &PromptTokens) {
        (&self.negative, &self.prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correctness {
    Correct,
    Incorrect,
    Unknown,
}

/// Channel tag for states captured on the primary forward path.
pub const MAIN_CHANNEL: &str = "main";

/// Post-block residual stream for every layer and processed position.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    /// One `positions × hidden_dim` matrix per layer, in layer order.
    pub states: Vec<Matrix>,
    /// Input positions before generation (audio frames plus prompt tokens).
    pub prompt_len: usize,
    pub generated_ids: Vec<u32>,
    pub correctness: Correctness,
    pub channel: String,
}

impl ResidualTrace {
    /// `(num_layers, positions, hidden_dim)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (t, d) = self.states.first().map_or((0, 0), Matrix::shape);
        (self.states.len(), t, d)
    }

    /// Position of the last input token, where steering vectors are read.
    pub fn extraction_position(&self) -> usize {
        self.prompt_len - 1
    }

    /// `L × d` matrix of the states at `position`.
    pub fn states_at(&self, position: usize) -> Matrix {
        let rows = self
            .states
            .iter()
            .map(|m| m.row(position).to_vec())
            .collect();
        Matrix::from_rows(rows).expect("trace layers share hidden_dim")
    }

    pub fn extraction_states(&self) -> Matrix {
        self.states_at(self.extraction_position())
    }

    pub fn last_position_states(&self) -> Matrix {
        self.states_at(self.dims().1 - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParameters {
    pub attn_norm: Vec<f64>,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub output: Matrix,
    pub mlp_norm: Vec<f64>,
    /// `mlp_dim × hidden_dim`.
    pub mlp_in: Matrix,
    pub mlp_in_bias: Vec<f64>,
    /// `hidden_dim × mlp_dim`.
    pub mlp_out: Matrix,
    pub mlp_out_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    /// `vocab_size × hidden_dim`.
    pub token_embedding: Matrix,
    /// `hidden_dim × audio_feature_dim`.
    pub audio_projection: Matrix,
    /// `max_seq_len × hidden_dim`.
    pub position_embedding: Matrix,
    pub layers: Vec<LayerParameters>,
    /// RMS-norm gain before the unembedding; `None` feeds the raw residual.
    pub final_norm: Option<Vec<f64>>,
    /// `vocab_size × hidden_dim`.
    pub unembedding: Matrix,
}

/// Immutable model: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ModelParameters,
    id: String,
}

/// Result of [`Model::greedy_decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Generated ids, excluding a terminating end-of-sequence token.
    pub tokens: Vec<u32>,
    pub stopped_at_eos: bool,
    /// Generation hit `max_seq_len` before `max_new_tokens` were produced.
    pub truncated: bool,
    /// Next-token logits at the first generation step (the answer step).
    pub answer_logits: Vec<f64>,
    /// Trace of the first generation step, covering every input position.
    pub prompt_trace: ResidualTrace,
}

/// Draws uniform `[-0.05, 0.05]` parameters in a fixed order:
/// token embedding, audio projection, position embedding, then per layer
/// query, key, value, output, mlp_in, mlp_in_bias, mlp_out, mlp_out_bias,
/// and finally the unembedding. Norm gains start at one.
pub fn init_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let d = config.hidden_dim;
    let m = MLP_EXPANSION * d;
    let mut draw = |rows: usize, cols: usize| {
        Matrix::from_fn(rows, cols, |_, _| {
            rng.random_range(-INIT_SCALE..=INIT_SCALE)
        })
    };
    let token_embedding = draw(config.vocab_size, d);
    let audio_projection = draw(d, config.audio_feature_dim);
    let position_embedding = draw(config.max_seq_len, d);
    let layers = (0..config.num_layers)
        .map(|_| LayerParameters {
            attn_norm: vec![1.0; d],
            query: draw(d, d),
            key: draw(d, d),
            value: draw(d, d),
            output: draw(d, d),
            mlp_norm: vec![1.0; d],
            mlp_in: draw(m, d),
            mlp_in_bias: draw(1, m).into_vec(),
            mlp_out: draw(d, m),
            mlp_out_bias: draw(1, d).into_vec(),
        })
        .collect();
    let unembedding = draw(config.vocab_size, d);
    let params = ModelParameters {
        token_embedding,
        audio_projection,
        position_embedding,
        layers,
        final_norm: Some(vec![1.0; d]),
        unembedding,
    };
    Model::from_parameters(config.clone(), params)
}

/// Builds a model whose answer logits read out a single direction:
/// `logit(yes) − logit(no) = c · ⟨direction, h_T⟩` with `c = PLANTED_GAIN`,
/// where `h_T` is the final-layer residual at the last position. The final
/// norm is removed so the relation is exact; every other unembedding row is
/// projected orthogonal to `direction`.
pub fn build_planted_model(config: &ModelConfig, direction: &[f64]) -> Result<Model> {
    build_planted_model_with_gain(config, direction, PLANTED_GAIN)
}

pub fn build_planted_model_with_gain(
    config: &ModelConfig,
    direction: &[f64],
    gain: f64,
) -> Result<Model> {
    if direction.len() != config.hidden_dim {
        return Err(Error::Shape(format!(
            "planted direction has length {}, expected hidden_dim {}",
            direction.len(),
            config.hidden_dim
        )));
    }
    let dd = tensor::dot(direction, direction);
    if dd == 0.0 || !dd.is_finite() {
        return Err(Error::Argument(
            "planted direction must be non-zero and finite".into(),
        ));
    }
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::Argument(format!(
            "planted gain must be positive, got {gain}"
        )));
    }
    let base = init_model(config)?;
    let mut params = base.params;
    params.final_norm = None;
    for r in 0..config.vocab_size {
        let row = params.unembedding.row_mut(r);
        match r as u32 {
            YES_TOKEN => row
                .iter_mut()
                .zip(direction)
                .for_each(|(w, u)| *w = 0.5 * gain * u),
            NO_TOKEN => row
                .iter_mut()
                .zip(direction)
                .for_each(|(w, u)| *w = -0.5 * gain * u),
            _ => {
                let coef = tensor::dot(row, direction) / dd;
                row.iter_mut()
                    .zip(direction)
                    .for_each(|(w, u)| *w -= coef * u);
            }
        }
    }
    let mut model = Model::from_parameters(config.clone(), params)?;
    model.id = format!("{}-planted", config.model_id());
    Ok(model)
}

impl Model {
    /// Wraps explicit parameters after checking every shape against `config`.
    pub fn from_parameters(config: ModelConfig, params: ModelParameters) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let expect = |name: &str, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if m.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(())
        };
        let expect_len = |name: &str, v: &[f64], len: usize| -> Result<()> {
            if v.len() != len {
                return Err(Error::Shape(format!(
                    "{name} has length {}, expected {len}",
                    v.len()
                )));
            }
            Ok(())
        };
        expect(
            "token_embedding",
            &params.token_embedding,
            config.vocab_size,
            d,
        )?;
        expect(
            "audio_projection",
            &params.audio_projection,
            d,
            config.audio_feature_dim,
        )?;
        expect(
            "position_embedding",
            &params.position_embedding,
            config.max_seq_len,
            d,
        )?;
        expect("unembedding", &params.unembedding, config.vocab_size, d)?;
        if let Some(g) = &params.final_norm {
            expect_len("final_norm", g, d)?;
        }
        if params.layers.len() != config.num_layers {
            return Err(Error::Shape(format!(
                "{} layers given, config declares {}",
                params.layers.len(),
                config.num_layers
            )));
        }
        for (i, layer) in params.layers.iter().enumerate() {
            let p = |s: &str| format!("layer {}: {s}", i + 1);
            let mlp_dim = layer.mlp_in.rows();
            expect_len(&p("attn_norm"), &layer.attn_norm, d)?;
            expect_len(&p("mlp_norm"), &layer.mlp_norm, d)?;
            expect(&p("query"), &layer.query, d, d)?;
            expect(&p("key"), &layer.key, d, d)?;
            expect(&p("value"), &layer.value, d, d)?;
            expect(&p("output"), &layer.output, d, d)?;
            expect(&p("mlp_in"), &layer.mlp_in, mlp_dim, d)?;
            expect_len(&p("mlp_in_bias"), &layer.mlp_in_bias, mlp_dim)?;
            expect(&p("mlp_out"), &layer.mlp_out, d, mlp_dim)?;
            expect_len(&p("mlp_out_bias"), &layer.mlp_out_bias, d)?;
        }
        let id = config.model_id();
        Ok(Self { config, params, id })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &ModelParameters {
        &self.params
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Unembeds one final-layer residual state.
    pub fn logits_from_state(&self, h: &[f64]) -> Vec<f64> {
        match &self.params.final_norm {
            Some(gain) => {
                self.params
                    .unembedding
                    .matvec(&tensor::rms_norm(h, gain, self.config.norm_epsilon))
            }
            None => self.params.unembedding.matvec(h),
        }
    }

    /// One causal pass. With a plan, steering is applied at the final
    /// position only (the position whose logits pick the next token).
    pub fn forward(
        &self,
        audio: &AudioFeatureSequence,
        prompt: &PromptTokens,
        intervention: Option<&InterventionPlan>,
    ) -> Result<(Vec<f64>, ResidualTrace)> {
        let positions = audio.frame_count() + prompt.len();
        self.forward_from(
            audio,
            prompt.ids(),
            intervention,
            positions.saturating_sub(1),
        )
    }

    /// `F(audio, prompt) ↦ h_T`: the `L × d` residual states at the last
    /// input position, without intervention.
    pub fn last_token_states(
        &self,
        audio: &AudioFeatureSequence,
        prompt: &PromptTokens,
    ) -> Result<Matrix> {
        let (_, trace) = self.forward(audio, prompt, None)?;
        Ok(trace.last_position_states())
    }

    /// Greedy generation with full recomputation per step. Steering covers
    /// every generation position (the last prompt position onward) and never
    /// the prefill positions before it.
    pub fn greedy_decode(
        &self,
        audio: &AudioFeatureSequence,
        prompt: &PromptTokens,
        intervention: Option<&InterventionPlan>,
        max_new_tokens: usize,
    ) -> Result<Decoded> {
        if max_new_tokens < 1 {
            return Err(Error::Argument("max_new_tokens must be at least 1".into()));
        }
        let prompt_positions = audio.frame_count() + prompt.len();
        let steer_from = prompt_positions - 1;
        let mut ids = prompt.ids().to_vec();
        let mut tokens = Vec::new();
        let mut answer = None;
        let mut stopped_at_eos = false;
        let mut truncated = false;
        while tokens.len() < max_new_tokens {
            if audio.frame_count() + ids.len() > self.config.max_seq_len && answer.is_some() {
                truncated = true;
                break;
            }
            let (logits, trace) = self.forward_from(audio, &ids, intervention, steer_from)?;
            let next = tensor::argmax(&logits) as u32;
            if answer.is_none() {
                answer = Some((logits, trace));
            }
            if next == EOS_TOKEN {
                stopped_at_eos = true;
                break;
            }
            tokens.push(next);
            ids.push(next);
        }
        let (answer_logits, mut prompt_trace) = answer.expect("first step always runs");
        prompt_trace.generated_ids = tokens.clone();
        Ok(Decoded {
            tokens,
            stopped_at_eos,
            truncated,
            answer_logits,
            prompt_trace,
        })
    }

    fn embed(&self, audio: &AudioFeatureSequence, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.config;
        if audio.feature_dim() != cfg.audio_feature_dim {
            return Err(Error::Shape(format!(
                "audio frames have {} features, model expects {}",
                audio.feature_dim(),
                cfg.audio_feature_dim
            )));
        }
        let len = audio.frame_count() + ids.len();
        if len > cfg.max_seq_len {
            return Err(Error::Capacity {
                len,
                max: cfg.max_seq_len,
            });
        }
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::Argument(format!(
                "token id {bad} out of range for vocab_size {}",
                cfg.vocab_size
            )));
        }
        let p = &self.params;
        let mut xs: Vec<Vec<f64>> = audio
            .frames()
            .iter()
            .map(|f| p.audio_projection.matvec(f))
            .collect();
        xs.extend(
            ids.iter()
                .map(|&id| p.token_embedding.row(id as usize).to_vec()),
        );
        for (pos, x) in xs.iter_mut().enumerate() {
            for (xi, pi) in x.iter_mut().zip(p.position_embedding.row(pos)) {
                *xi += pi;
            }
        }
        Ok(xs)
    }

    fn attention(&self, layer: &LayerParameters, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        let hd = cfg.head_dim;
        let scale = 1.0 / (hd as f64).sqrt();
        let normed: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| tensor::rms_norm(x, &layer.attn_norm, cfg.norm_epsilon))
            .collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|x| layer.query.matvec(x)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|x| layer.key.matvec(x)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|x| layer.value.matvec(x)).collect();
        (0..xs.len())
            .map(|t| {
                let mut mixed = vec![0.0; cfg.hidden_dim];
                for h in 0..cfg.num_heads {
                    let span = h * hd..(h + 1) * hd;
                    let scores: Vec<f64> = (0..=t)
                        .map(|s| tensor::dot(&q[t][span.clone()], &k[s][span.clone()]) * scale)
                        .collect();
                    let weights = tensor::softmax(&scores);
                    for (s, w) in weights.iter().enumerate() {
                        for (o, vv) in mixed[span.clone()].iter_mut().zip(&v[s][span.clone()]) {
                            *o += w * vv;
                        }
                    }
                }
                layer.output.matvec(&mixed)
            })
            .collect()
    }

    fn mlp(&self, layer: &LayerParameters, x: &[f64]) -> Vec<f64> {
        let normed = tensor::rms_norm(x, &layer.mlp_norm, self.config.norm_epsilon);
        let hidden: Vec<f64> = layer
            .mlp_in
            .matvec(&normed)
            .into_iter()
            .zip(&layer.mlp_in_bias)
            .map(|(a, b)| tensor::gelu(a + b))
            .collect();
        layer
            .mlp_out
            .matvec(&hidden)
            .into_iter()
            .zip(&layer.mlp_out_bias)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Core pass; steering (if any) is applied at positions `>= steer_from`.
    pub(crate) fn forward_from(
        &self,
        audio: &AudioFeatureSequence,
        ids: &[u32],
        intervention: Option<&InterventionPlan>,
        steer_from: usize,
    ) -> Result<(Vec<f64>, ResidualTrace)> {
        if let Some(plan) = intervention {
            plan.check_model(self.num_layers(), self.hidden_dim())?;
        }
        let mut xs = self.embed(audio, ids)?;
        let n = xs.len();
        if n == 0 {
            return Err(Error::Argument("empty input sequence".into()));
        }
        let mut states = Vec::with_capacity(self.num_layers());
        for (l, layer) in self.params.layers.iter().enumerate() {
            let attn = self.attention(layer, &xs);
            for (x, a) in xs.iter_mut().zip(&attn) {
                x.iter_mut().zip(a).for_each(|(xi, ai)| *xi += ai);
            }
            for x in xs.iter_mut() {
                let m = self.mlp(layer, x);
                x.iter_mut().zip(&m).for_each(|(xi, mi)| *xi += mi);
            }
            if let Some(plan) = intervention {
                for x in xs.iter_mut().skip(steer_from) {
                    *x = plan.apply(l, x);
                }
            }
            states.push(Matrix::from_rows(xs.clone()).expect("uniform hidden_dim"));
        }
        let logits = self.logits_from_state(&xs[n - 1]);
        let trace = ResidualTrace {
            states,
            prompt_len: audio.frame_count() + ids.len(),
            generated_ids: Vec::new(),
            correctness: Correctness::Unknown,
            channel: MAIN_CHANNEL.to_string(),
        };
        Ok((logits, trace))
    }
}
