//! Layer-wise influence analysis.
//!
//! For every layer, the cosine between each trace's extraction-position state
//! and that layer's steering direction is averaged separately over correct
//! and incorrect traces, and the two groups are compared with Cohen's d.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::traces::TraceRecord;
use crate::model::Correctness;
use crate::steering::{default_layer_partition, LayerPartition, SteeringVector};
use crate::tensor;

/// `⟨a,b⟩ / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = tensor::l2_norm(a);
    let nb = tensor::l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity(
            "cosine with a zero vector".into(),
        ));
    }
    Ok((tensor::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Bessel-corrected sample variance.
fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Cohen's d of `a` against `b` with the pooled sample standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument(format!(
            "cohen's d needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled =
        ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0);
    if pooled.is_nan() || pooled <= 0.0 {
        return Err(Error::UndefinedEffectSize("pooled variance is zero".into()));
    }
    Ok((mean(a) - mean(b)) / pooled.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerInfluence {
    /// 1-indexed.
    pub layer: usize,
    pub mean_cos_correct: Option<f64>,
    pub mean_cos_incorrect: Option<f64>,
    /// `None` when a group has fewer than two traces or zero variance.
    pub effect_size_d: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerInfluenceReport {
    pub rows: Vec<LayerInfluence>,
}

impl LayerInfluenceReport {
    pub fn num_layers(&self) -> usize {
        self.rows.len()
    }

    /// 1-indexed layers sorted by descending `|d|`; undefined values last.
    pub fn ranking(&self) -> Vec<usize> {
        let mut layers: Vec<&LayerInfluence> = self.rows.iter().collect();
        layers.sort_by(|a, b| {
            let key = |r: &LayerInfluence| r.effect_size_d.map_or(-1.0, f64::abs);
            key(b).total_cmp(&key(a)).then(a.layer.cmp(&b.layer))
        });
        layers.into_iter().map(|r| r.layer).collect()
    }

    /// Plot-ready CSV; undefined values are left empty.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        let mut out = String::from(
            "layer,mean_cos_correct,mean_cos_incorrect,cohens_d,n_correct,n_incorrect\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.layer,
                fmt(r.mean_cos_correct),
                fmt(r.mean_cos_incorrect),
                fmt(r.effect_size_d),
                r.n_correct,
                r.n_incorrect
            );
        }
        out
    }
}

pub fn layer_influence_report(
    traces: &[TraceRecord],
    vector: &SteeringVector,
) -> Result<LayerInfluenceReport> {
    let (num_layers, d) = (vector.num_layers(), vector.hidden_dim());
    for t in traces {
        if t.correctness == Correctness::Unknown {
            return Err(Error::Labeling(format!(
                "trace `{}` has no correctness label",
                t.instance_id
            )));
        }
        if t.extraction.shape() != (num_layers, d) {
            return Err(Error::Shape(format!(
                "trace `{}` is {}x{}, steering vector is {num_layers}x{d}",
                t.instance_id,
                t.extraction.rows(),
                t.extraction.cols()
            )));
        }
    }
    let mut rows = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let dir = vector.layer(l);
        let mut correct = Vec::new();
        let mut incorrect = Vec::new();
        for t in traces {
            let c = cosine_similarity(t.extraction.row(l), dir).map_err(|e| {
                Error::UndefinedSimilarity(format!(
                    "layer {}, trace `{}`: {e}",
                    l + 1,
                    t.instance_id
                ))
            })?;
            match t.correctness {
                Correctness::Correct => correct.push(c),
                _ => incorrect.push(c),
            }
        }
        let group_mean = |xs: &[f64]| (!xs.is_empty()).then(|| mean(xs));
        rows.push(LayerInfluence {
            layer: l + 1,
            mean_cos_correct: group_mean(&correct),
            mean_cos_incorrect: group_mean(&incorrect),
            effect_size_d: cohens_d(&correct, &incorrect).ok(),
            n_correct: correct.len(),
            n_incorrect: incorrect.len(),
        });
    }
    Ok(LayerInfluenceReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionProposal {
    pub partition: LayerPartition,
    /// The report could not support a proposal and the default rule was used.
    pub fell_back: bool,
}

/// Increase set = layers whose `|d|` is strictly above the median `|d|` of
/// all layers, never including the final `exclude_last` layers. Undefined
/// effect sizes or an empty result fall back to [`default_layer_partition`].
pub fn propose_partition(
    report: &LayerInfluenceReport,
    exclude_last: usize,
) -> Result<PartitionProposal> {
    let num_layers = report.num_layers();
    if num_layers <= exclude_last + 1 {
        return Err(Error::Argument(format!(
            "{num_layers} layers cannot exclude the last {exclude_last}"
        )));
    }
    let fallback = || {
        Ok(PartitionProposal {
            partition: default_layer_partition(num_layers)?,
            fell_back: true,
        })
    };
    let Some(mags) = report
        .rows
        .iter()
        .map(|r| r.effect_size_d.map(f64::abs))
        .collect::<Option<Vec<f64>>>()
    else {
        return fallback();
    };
    let mut sorted = mags.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    let increase: Vec<usize> = mags
        .iter()
        .enumerate()
        .filter(|(i, m)| *i + exclude_last < num_layers && **m > median)
        .map(|(i, _)| i + 1)
        .collect();
    if increase.is_empty() {
        return fallback();
    }
    Ok(PartitionProposal {
        partition: LayerPartition::from_increase(increase, num_layers)?,
        fell_back: false,
    })
}
