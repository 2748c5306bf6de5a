//! Contrastive steering vectors, per-layer strength schedules and
//! norm-preserving injection.
//!
//! Layers are 1-indexed in every public set and file; row `l - 1` of a
//! [`SteeringVector`] belongs to layer `l`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContrastivePair, Model};
use crate::tensor::{self, Matrix};

/// Base strength used for both uniform and adaptive steering.
pub const DEFAULT_LAMBDA: f64 = 0.05;
/// Default spread between increased and decreased layers.
pub const DEFAULT_BETA: f64 = 0.5;

/// One direction per layer, `L × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    model_id: String,
    rows: Matrix,
}

impl SteeringVector {
    pub fn new(model_id: impl Into<String>, rows: Matrix) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::Shape(
                "steering vector needs at least one layer".into(),
            ));
        }
        if let Some(bad) = rows.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "steering vector entry {bad} is not finite"
            )));
        }
        Ok(Self {
            model_id: model_id.into(),
            rows,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn num_layers(&self) -> usize {
        self.rows.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.rows.cols()
    }

    /// Direction for 0-based layer row `index`.
    pub fn layer(&self, index: usize) -> &[f64] {
        self.rows.row(index)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    pub fn is_zero(&self) -> bool {
        self.rows.as_slice().iter().all(|v| *v == 0.0)
    }

    /// Writes the text container. Values are printed in shortest round-trip
    /// form, so reading the file back is bit-exact.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = VectorFile {
            format: VECTOR_FORMAT.to_string(),
            version: VECTOR_VERSION,
            model_id: self.model_id.clone(),
            num_layers: self.num_layers(),
            hidden_dim: self.hidden_dim(),
            layer_index_base: 1,
            values: self.rows.as_slice().to_vec(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("vector file serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VectorFile = serde_json::from_str(&text).map_err(|e| {
            Error::ingestion(path, e.line(), field_of(&e.to_string()), e.to_string())
        })?;
        if file.format != VECTOR_FORMAT {
            return Err(Error::ingestion(
                path,
                1,
                "format",
                format!("unexpected `{}`", file.format),
            ));
        }
        if file.version != VECTOR_VERSION {
            return Err(Error::ingestion(
                path,
                1,
                "version",
                format!("unsupported version {}", file.version),
            ));
        }
        if file.layer_index_base != 1 {
            return Err(Error::ingestion(
                path,
                1,
                "layer_index_base",
                format!("expected 1, found {}", file.layer_index_base),
            ));
        }
        let rows = Matrix::from_vec(file.num_layers, file.hidden_dim, file.values)
            .map_err(|e| Error::ingestion(path, 1, "values", e.to_string()))?;
        SteeringVector::new(file.model_id, rows)
            .map_err(|e| Error::ingestion(path, 1, "values", e.to_string()))
    }
}

const VECTOR_FORMAT: &str = "avsteer-steering-vector";
const VECTOR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VectorFile {
    format: String,
    version: u32,
    model_id: String,
    num_layers: usize,
    hidden_dim: usize,
    layer_index_base: usize,
    /// Row-major `num_layers × hidden_dim`.
    values: Vec<f64>,
}

/// Pulls the backticked field name out of a serde error message, if any.
pub(crate) fn field_of(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map_or_else(|| "<document>".to_string(), str::to_string)
}

/// `V = F(X_p) − F(X_n)`, read at the last input position of each side.
pub fn extract_steering_vector(model: &Model, pair: &ContrastivePair) -> Result<SteeringVector> {
    let (pos_audio, prompt) = pair.positive();
    let (neg_audio, _) = pair.negative();
    let pos = model.last_token_states(pos_audio, prompt)?;
    let neg = model.last_token_states(neg_audio, prompt)?;
    let diff: Vec<f64> = pos
        .as_slice()
        .iter()
        .zip(neg.as_slice())
        .map(|(p, n)| p - n)
        .collect();
    SteeringVector::new(model.id(), Matrix::from_vec(pos.rows(), pos.cols(), diff)?)
}

/// Disjoint 1-indexed layer sets covering `1..=L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPartition {
    pub increase: BTreeSet<usize>,
    pub decrease: BTreeSet<usize>,
}

impl LayerPartition {
    /// Increase set as given; every other layer in `1..=num_layers` decreases.
    pub fn from_increase(
        increase: impl IntoIterator<Item = usize>,
        num_layers: usize,
    ) -> Result<Self> {
        let increase: BTreeSet<usize> = increase.into_iter().collect();
        if let Some(bad) = increase.iter().find(|&&l| l < 1 || l > num_layers) {
            return Err(Error::Partition(format!(
                "layer {bad} outside 1..={num_layers}"
            )));
        }
        let decrease = (1..=num_layers).filter(|l| !increase.contains(l)).collect();
        Ok(Self { increase, decrease })
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if let Some(l) = self.increase.intersection(&self.decrease).next() {
            return Err(Error::Partition(format!("layer {l} is in both sets")));
        }
        for l in self.increase.iter().chain(&self.decrease) {
            if *l < 1 || *l > num_layers {
                return Err(Error::Partition(format!(
                    "layer {l} outside 1..={num_layers}"
                )));
            }
        }
        if let Some(missing) =
            (1..=num_layers).find(|l| !self.increase.contains(l) && !self.decrease.contains(l))
        {
            return Err(Error::Partition(format!(
                "layer {missing} is in neither set"
            )));
        }
        Ok(())
    }
}

/// Later-middle layers increase; early layers and the final two decrease.
///
/// Increase set is `⌈L/2⌉ − 1 ..= L − 2` (1-indexed), which gives
/// `{15..30}` for 32 layers and `{17..33}` for 35.
pub fn default_layer_partition(num_layers: usize) -> Result<LayerPartition> {
    if num_layers < 4 {
        return Err(Error::Argument(format!(
            "default partition needs at least 4 layers, got {num_layers}"
        )));
    }
    let first = num_layers.div_ceil(2) - 1;
    LayerPartition::from_increase(first..=num_layers - 2, num_layers)
}

/// Per-layer strengths `λ^l` plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringSchedule {
    pub base_lambda: f64,
    pub beta: f64,
    pub partition: LayerPartition,
    /// `per_layer[l - 1] = λ^l`.
    pub per_layer: Vec<f64>,
}

impl SteeringSchedule {
    pub fn num_layers(&self) -> usize {
        self.per_layer.len()
    }

    /// `Σ_l λ^l`, compensated and summed in layer order.
    pub fn total_strength(&self) -> f64 {
        compensated_sum(&self.per_layer)
    }

    pub fn is_zero(&self) -> bool {
        self.per_layer.iter().all(|s| *s == 0.0)
    }
}

/// Neumaier summation.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Argument(format!(
            "lambda must be finite and ≥ 0, got {lambda}"
        )));
    }
    Ok(())
}

/// `λ^l = λ` for every layer.
pub fn uniform_schedule(lambda: f64, num_layers: usize) -> Result<SteeringSchedule> {
    check_lambda(lambda)?;
    if num_layers < 1 {
        return Err(Error::Argument("num_layers must be at least 1".into()));
    }
    Ok(SteeringSchedule {
        base_lambda: lambda,
        beta: 0.0,
        partition: LayerPartition::from_increase(1..=num_layers, num_layers)?,
        per_layer: vec![lambda; num_layers],
    })
}

/// Budget-preserving two-level schedule:
/// `(1 + β·|l_d|/|l_i|)·λ` on the increase set and `(1 − β)·λ` elsewhere.
pub fn adaptive_schedule(
    lambda: f64,
    beta: f64,
    partition: &LayerPartition,
    num_layers: usize,
) -> Result<SteeringSchedule> {
    check_lambda(lambda)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Argument(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    partition.validate(num_layers)?;
    if partition.increase.is_empty() {
        return Err(Error::Argument("increase set must be non-empty".into()));
    }
    let ratio = partition.decrease.len() as f64 / partition.increase.len() as f64;
    let up = (1.0 + ratio * beta) * lambda;
    let down = (1.0 - beta) * lambda;
    let per_layer = (1..=num_layers)
        .map(|l| {
            if partition.increase.contains(&l) {
                up
            } else {
                down
            }
        })
        .collect();
    Ok(SteeringSchedule {
        base_lambda: lambda,
        beta,
        partition: partition.clone(),
        per_layer,
    })
}

/// `h + strength·v`, rescaled back to `‖h‖₂` when `renormalize` is set.
/// A zero pre-norm result is returned as is.
pub fn inject(h: &[f64], v: &[f64], strength: f64, renormalize: bool) -> Result<Vec<f64>> {
    if h.len() != v.len() {
        return Err(Error::Shape(format!(
            "hidden state has {} entries, steering direction {}",
            h.len(),
            v.len()
        )));
    }
    Ok(inject_unchecked(h, v, strength, renormalize))
}

fn inject_unchecked(h: &[f64], v: &[f64], strength: f64, renormalize: bool) -> Vec<f64> {
    if strength == 0.0 {
        return h.to_vec();
    }
    let mut out: Vec<f64> = h.iter().zip(v).map(|(a, b)| a + strength * b).collect();
    if renormalize {
        let new_norm = tensor::l2_norm(&out);
        if new_norm > 0.0 {
            let scale = tensor::l2_norm(h) / new_norm;
            out.iter_mut().for_each(|x| *x *= scale);
        }
    }
    out
}

/// Steering applied after each block: `inject(h^l, v^l, λ^l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionPlan {
    vector: SteeringVector,
    per_layer: Vec<f64>,
    renormalize: bool,
}

pub fn make_intervention(
    vector: &SteeringVector,
    schedule: &SteeringSchedule,
) -> Result<InterventionPlan> {
    InterventionPlan::new(vector.clone(), schedule.per_layer.clone(), true)
}

impl InterventionPlan {
    pub fn new(vector: SteeringVector, per_layer: Vec<f64>, renormalize: bool) -> Result<Self> {
        if vector.num_layers() != per_layer.len() {
            return Err(Error::Shape(format!(
                "steering vector has {} layers, schedule has {}",
                vector.num_layers(),
                per_layer.len()
            )));
        }
        if let Some(bad) = per_layer.iter().find(|s| !s.is_finite()) {
            return Err(Error::Argument(format!("strength {bad} is not finite")));
        }
        Ok(Self {
            vector,
            per_layer,
            renormalize,
        })
    }

    pub fn vector(&self) -> &SteeringVector {
        &self.vector
    }

    pub fn per_layer(&self) -> &[f64] {
        &self.per_layer
    }

    pub fn renormalize(&self) -> bool {
        self.renormalize
    }

    pub fn num_layers(&self) -> usize {
        self.per_layer.len()
    }

    pub(crate) fn check_model(&self, num_layers: usize, hidden_dim: usize) -> Result<()> {
        if self.num_layers() != num_layers || self.vector.hidden_dim() != hidden_dim {
            return Err(Error::Shape(format!(
                "intervention is {}x{}, model is {num_layers}x{hidden_dim}",
                self.num_layers(),
                self.vector.hidden_dim()
            )));
        }
        Ok(())
    }

    /// Steers one residual state at 0-based layer row `layer`.
    pub fn apply(&self, layer: usize, h: &[f64]) -> Vec<f64> {
        inject_unchecked(
            h,
            self.vector.layer(layer),
            self.per_layer[layer],
            self.renormalize,
        )
    }
}
