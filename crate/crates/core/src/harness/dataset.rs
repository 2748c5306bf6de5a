//! Seeded synthetic yes/no "is this event in the clip" benchmark.
//!
//! Every event has a fixed random prototype feature vector. A clip is Gaussian
//! noise with each present event's prototype added over its own slot of
//! frames. Questions ask about one event; half of each division's questions
//! are about a present event (gold yes) and half about an absent one (gold
//! no). Divisions differ only in how the absent event is picked:
//!
//! * `random`: uniformly among absent events;
//! * `popular`: the most frequent absent event;
//! * `adversarial`: the usual companion of an event that is present.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::protocol::{apply_prompt_protocol, Answer, Vocabulary, EVENT_NAMES};
use crate::model::{AudioFeatureSequence, ContrastivePair, PromptTokens};

const STRUCTURE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Division {
    Adversarial,
    Popular,
    Random,
}

impl Division {
    pub const ALL: [Division; 3] = [Division::Adversarial, Division::Popular, Division::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Division::Adversarial => "adversarial",
            Division::Popular => "popular",
            Division::Random => "random",
        }
    }
}

impl fmt::Display for Division {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Division {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Division::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown division `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Binary,
    MultipleChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpan {
    pub event: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaInstance {
    pub instance_id: String,
    pub audio: AudioFeatureSequence,
    pub question_text: String,
    /// Tokens of the bare question, before the prompt protocol is applied.
    pub question: PromptTokens,
    pub gold: Answer,
    pub division: Option<Division>,
    pub task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_count: Option<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventSpan>,
}

impl QaInstance {
    /// Checks gold/task-kind consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| {
            Err(Error::Config(format!(
                "instance `{}`: {m}",
                self.instance_id
            )))
        };
        match self.task_kind {
            TaskKind::Binary => {
                if !matches!(self.gold, Answer::Yes | Answer::No) {
                    return bad("binary gold must be yes or no");
                }
                if self.division.is_none() {
                    return bad("binary instances need a division");
                }
            }
            TaskKind::MultipleChoice => match (self.gold, self.option_count) {
                (Answer::Option(i), Some(n)) if (4..=5).contains(&n) && i < n => {}
                _ => {
                    return bad(
                        "multiple-choice gold must be an option below option_count ∈ {4, 5}",
                    )
                }
            },
        }
        Ok(())
    }

    /// Text fed to the model: wrapped in the yes/no protocol for binary
    /// questions, verbatim for multiple choice.
    pub fn prompt_text(&self) -> Result<String> {
        match self.task_kind {
            TaskKind::Binary => apply_prompt_protocol(&self.question_text),
            TaskKind::MultipleChoice => Ok(self.question_text.clone()),
        }
    }

    pub fn prompt_tokens(&self, vocab: &Vocabulary) -> Result<PromptTokens> {
        PromptTokens::new(vocab.encode(&self.prompt_text()?))
    }

    /// `(X_p, X_n)` under the evaluation prompt.
    pub fn contrastive_pair(&self, vocab: &Vocabulary) -> Result<ContrastivePair> {
        Ok(ContrastivePair::new(
            self.audio.clone(),
            self.prompt_tokens(vocab)?,
        ))
    }

    pub fn division_label(&self) -> &'static str {
        self.division.map_or("multiple_choice", Division::as_str)
    }
}

/// Same question and metadata with the audio replaced by silence.
pub fn build_negative_instance(instance: &QaInstance) -> QaInstance {
    QaInstance {
        audio: instance.audio.silent_like(),
        ..instance.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivisionCounts {
    pub adversarial: usize,
    pub popular: usize,
    pub random: usize,
}

impl DivisionCounts {
    pub fn get(&self, d: Division) -> usize {
        match d {
            Division::Adversarial => self.adversarial,
            Division::Popular => self.popular,
            Division::Random => self.random,
        }
    }

    pub fn total(&self) -> usize {
        self.adversarial + self.popular + self.random
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub per_division: DivisionCounts,
    pub num_events: usize,
    pub events_per_clip: usize,
    pub frame_count: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            per_division: DivisionCounts {
                adversarial: 40,
                popular: 40,
                random: 40,
            },
            num_events: 12,
            events_per_clip: 2,
            frame_count: 8,
            feature_dim: 16,
            noise_std: 0.1,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        for d in Division::ALL {
            let n = self.per_division.get(d);
            if !n.is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "per_division.{d} = {n} must be even so yes/no stay balanced"
                )));
            }
        }
        if self.per_division.total() == 0 {
            return Err(Error::Config("per_division counts are all zero".into()));
        }
        if self.events_per_clip < 1 {
            return Err(Error::Config("events_per_clip must be at least 1".into()));
        }
        if self.num_events < self.events_per_clip + 2 || self.num_events > EVENT_NAMES.len() {
            return Err(Error::Config(format!(
                "num_events = {} must lie in {}..={}",
                self.num_events,
                self.events_per_clip + 2,
                EVENT_NAMES.len()
            )));
        }
        if self.frame_count < self.events_per_clip {
            return Err(Error::Config(format!(
                "frame_count = {} must be at least events_per_clip = {}",
                self.frame_count, self.events_per_clip
            )));
        }
        if self.feature_dim < 1 {
            return Err(Error::Config("feature_dim must be at least 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std = {} must be finite and ≥ 0",
                self.noise_std
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    /// `num_events` prototype vectors of length `feature_dim`.
    pub prototypes: Vec<Vec<f64>>,
    pub instances: Vec<QaInstance>,
}

fn event_question(event: usize) -> String {
    format!("Is there a {} in the audio?", EVENT_NAMES[event])
}

/// Event that tends to appear together with `event`.
pub fn companion_event(event: usize, num_events: usize) -> usize {
    (event + 1) % num_events
}

pub fn generate_synthetic_dataset(spec: &GeneratorSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let vocab = Vocabulary::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STRUCTURE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(NOISE_STREAM);

    let prototypes: Vec<Vec<f64>> = (0..spec.num_events)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    // Lower event ids are more frequent.
    let popularity: Vec<f64> = (0..spec.num_events).map(|k| 1.0 / (k + 1) as f64).collect();
    let slot = spec.frame_count / spec.events_per_clip;

    let mut instances = Vec::with_capacity(spec.per_division.total());
    for division in Division::ALL {
        for i in 0..spec.per_division.get(division) {
            let present = sample_weighted_distinct(&mut rng, &popularity, spec.events_per_clip);
            let absent: Vec<usize> = (0..spec.num_events)
                .filter(|e| !present.contains(e))
                .collect();
            let wants_yes = i % 2 == 0;
            let queried = if wants_yes {
                *present.choose(&mut rng).expect("clip has events")
            } else {
                match division {
                    Division::Random => *absent.choose(&mut rng).expect("absent events exist"),
                    Division::Popular => absent[0],
                    Division::Adversarial => {
                        let mut order = present.clone();
                        order.shuffle(&mut rng);
                        order
                            .iter()
                            .map(|&e| companion_event(e, spec.num_events))
                            .find(|c| !present.contains(c))
                            .unwrap_or_else(|| {
                                *absent.choose(&mut rng).expect("absent events exist")
                            })
                    }
                }
            };

            let mut frames: Vec<Vec<f64>> = (0..spec.frame_count)
                .map(|_| {
                    (0..spec.feature_dim)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut noise_rng);
                            spec.noise_std * z
                        })
                        .collect()
                })
                .collect();
            let events: Vec<EventSpan> = present
                .iter()
                .enumerate()
                .map(|(k, &event)| EventSpan {
                    event,
                    start: k * slot,
                    len: slot,
                })
                .collect();
            for span in &events {
                for frame in &mut frames[span.start..span.start + span.len] {
                    frame
                        .iter_mut()
                        .zip(&prototypes[span.event])
                        .for_each(|(f, p)| *f += p);
                }
            }

            let question_text = event_question(queried);
            instances.push(QaInstance {
                instance_id: format!("{division}-{i:04}"),
                audio: AudioFeatureSequence::new(spec.feature_dim, frames)?,
                question: PromptTokens::new(vocab.encode(&question_text))?,
                question_text,
                gold: if wants_yes { Answer::Yes } else { Answer::No },
                division: Some(division),
                task_kind: TaskKind::Binary,
                option_count: None,
                events,
            });
        }
    }
    Ok(SyntheticDataset {
        prototypes,
        instances,
    })
}

/// `count` distinct indices drawn without replacement proportionally to `weights`.
fn sample_weighted_distinct(rng: &mut impl Rng, weights: &[f64], count: usize) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (j, &i) in remaining.iter().enumerate() {
            if target < weights[i] {
                pick = j;
                break;
            }
            target -= weights[i];
        }
        chosen.push(remaining.remove(pick));
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_balance() {
        let ds = generate_synthetic_dataset(&GeneratorSpec::default(), 3).unwrap();
        assert_eq!(ds.instances.len(), 120);
        assert_eq!(
            ds.instances
                .iter()
                .filter(|i| i.gold == Answer::Yes)
                .count(),
            60
        );
        for d in Division::ALL {
            let yes = ds
                .instances
                .iter()
                .filter(|i| i.division == Some(d) && i.gold == Answer::Yes)
                .count();
            assert_eq!(yes, 20);
        }
        assert!(ds.instances.iter().all(|i| i.validate().is_ok()));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = GeneratorSpec::default();
        assert_eq!(
            generate_synthetic_dataset(&spec, 9).unwrap(),
            generate_synthetic_dataset(&spec, 9).unwrap()
        );
        assert_ne!(
            generate_synthetic_dataset(&spec, 9).unwrap(),
            generate_synthetic_dataset(&spec, 10).unwrap()
        );
    }

    #[test]
    fn gold_matches_presence() {
        let spec = GeneratorSpec::default();
        let ds = generate_synthetic_dataset(&spec, 4).unwrap();
        for inst in &ds.instances {
            let queried = EVENT_NAMES
                .iter()
                .position(|n| inst.question_text.contains(&format!(" {n} ")))
                .unwrap();
            let present = inst.events.iter().any(|s| s.event == queried);
            assert_eq!(present, inst.gold == Answer::Yes, "{}", inst.instance_id);
            if inst.gold == Answer::No && inst.division == Some(Division::Popular) {
                let best_absent = (0..spec.num_events)
                    .find(|e| inst.events.iter().all(|s| s.event != *e))
                    .unwrap();
                assert_eq!(queried, best_absent);
            }
        }
    }

    #[test]
    fn odd_count_rejected_with_field_name() {
        let mut spec = GeneratorSpec::default();
        spec.per_division.popular = 7;
        let err = generate_synthetic_dataset(&spec, 0).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("per_division.popular")));
    }

    #[test]
    fn negative_instance_is_silent_and_idempotent() {
        let ds = generate_synthetic_dataset(&GeneratorSpec::default(), 1).unwrap();
        let inst = &ds.instances[0];
        let neg = build_negative_instance(inst);
        assert_eq!(neg.audio.frame_count(), inst.audio.frame_count());
        assert!(neg.audio.is_silent());
        assert_eq!(neg.question, inst.question);
        assert_eq!(build_negative_instance(&neg), neg);
        let pair = ContrastivePair::from_parts(
            inst.audio.clone(),
            neg.audio.clone(),
            inst.prompt_tokens(&Vocabulary::standard()).unwrap(),
        );
        assert!(pair.is_ok());
    }
}
