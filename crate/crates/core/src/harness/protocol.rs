//! Prompt wrapping, answer normalization and the word-level vocabulary
//! shared by the synthetic benchmark and the tiny model.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{EOS_TOKEN, FIRST_OPTION_TOKEN, NO_TOKEN, YES_TOKEN};

pub const PROMPT_PREFIX: &str = "Focus on the given audio and answer the following question.";
pub const PROMPT_SUFFIX: &str = "Answer with only yes or no.";

/// Maximum multiple-choice options (A–E).
pub const MAX_OPTIONS: u8 = 5;

/// Wraps a yes/no question in the fixed prefix and suffix. Already wrapped
/// text is returned unchanged.
pub fn apply_prompt_protocol(question: &str) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::Argument("question must not be empty".into()));
    }
    if question.starts_with(PROMPT_PREFIX) && question.ends_with(PROMPT_SUFFIX) {
        return Ok(question.to_string());
    }
    Ok(format!("{PROMPT_PREFIX} {question} {PROMPT_SUFFIX}"))
}

/// Normalized model answer or gold label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Answer {
    Yes,
    No,
    /// 0-based option index, rendered as a letter.
    Option(u8),
    Invalid,
}

impl Answer {
    pub fn option_letter(index: u8) -> char {
        (b'A' + index) as char
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Yes => f.write_str("yes"),
            Answer::No => f.write_str("no"),
            Answer::Option(i) => write!(f, "{}", Answer::option_letter(*i)),
            Answer::Invalid => f.write_str("invalid"),
        }
    }
}

impl FromStr for Answer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "yes" => Ok(Answer::Yes),
            "no" => Ok(Answer::No),
            "invalid" => Ok(Answer::Invalid),
            l if l.len() == 1 && (b'a'..b'a' + MAX_OPTIONS).contains(&l.as_bytes()[0]) => {
                Ok(Answer::Option(l.as_bytes()[0] - b'a'))
            }
            _ => Err(Error::Argument(format!("`{s}` is not an answer label"))),
        }
    }
}

impl Serialize for Answer {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Answer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// First word of `text`, lowercased, with surrounding punctuation removed.
fn leading_word(text: &str) -> Option<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .find(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Maps free-form generated text to yes, no or invalid.
pub fn normalize_answer(text: &str) -> Answer {
    match leading_word(text).as_deref() {
        Some("yes") => Answer::Yes,
        Some("no") => Answer::No,
        _ => Answer::Invalid,
    }
}

/// Maps free-form generated text to a leading option letter within
/// `option_count`, or invalid.
pub fn normalize_option(text: &str, option_count: u8) -> Answer {
    match leading_word(text) {
        Some(w) if w.len() == 1 => {
            let b = w.as_bytes()[0];
            if (b'a'..b'a' + option_count.min(MAX_OPTIONS)).contains(&b) {
                Answer::Option(b - b'a')
            } else {
                Answer::Invalid
            }
        }
        _ => Answer::Invalid,
    }
}

pub const EVENT_NAMES: [&str; 16] = [
    "dog", "cat", "car", "bell", "rain", "speech", "music", "siren", "bird", "door", "engine",
    "baby", "wind", "water", "phone", "clock",
];

const PUNCTUATION: [&str; 3] = [".", "?", ","];

/// Closed word-level vocabulary. Ids 0–7 are the model's reserved tokens
/// (end-of-sequence, yes, no, options A–E); unknown words map to `<unk>`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
    unk: u32,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocabulary {
    pub fn standard() -> Self {
        let mut words: Vec<String> = vec!["<eos>".into(), "yes".into(), "no".into()];
        words.extend((0..MAX_OPTIONS).map(|i| Answer::option_letter(i).to_string()));
        words.push("<unk>".into());
        words.extend(PUNCTUATION.iter().map(|s| s.to_string()));
        let text_words = [
            "focus",
            "on",
            "the",
            "given",
            "audio",
            "and",
            "answer",
            "following",
            "question",
            "with",
            "only",
            "or",
            "is",
            "there",
            "in",
        ];
        words.extend(text_words.iter().map(|s| s.to_string()));
        words.extend(EVENT_NAMES.iter().map(|s| s.to_string()));
        debug_assert_eq!(words[EOS_TOKEN as usize], "<eos>");
        debug_assert_eq!(words[YES_TOKEN as usize], "yes");
        debug_assert_eq!(words[NO_TOKEN as usize], "no");
        debug_assert_eq!(words[FIRST_OPTION_TOKEN as usize], "A");
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_lowercase(), i as u32))
            .collect();
        let unk = 3 + u32::from(MAX_OPTIONS);
        Self { words, index, unk }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index
            .get(&word.to_lowercase())
            .copied()
            .unwrap_or(self.unk)
    }

    /// Splits on whitespace and punctuation, lowercasing words.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, ids: &mut Vec<u32>| {
            if !word.is_empty() {
                ids.push(self.id(word));
                word.clear();
            }
        };
        for c in text.chars() {
            if c.is_alphanumeric() || c == '_' || c == '\'' {
                word.push(c);
            } else {
                flush(&mut word, &mut ids);
                if !c.is_whitespace() {
                    ids.push(self.id(&c.to_string()));
                }
            }
        }
        flush(&mut word, &mut ids);
        ids
    }

    /// Joins tokens with spaces, attaching punctuation to the previous word
    /// and dropping end-of-sequence.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == EOS_TOKEN {
                continue;
            }
            let word = self.words.get(id as usize).map_or("<unk>", String::as_str);
            if !out.is_empty() && !PUNCTUATION.contains(&word) {
                out.push(' ');
            }
            out.push_str(word);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_wraps_exactly_once() {
        let wrapped = apply_prompt_protocol("Is there a dog barking?").unwrap();
        assert_eq!(
            wrapped,
            "Focus on the given audio and answer the following question. Is there a dog barking? Answer with only yes or no."
        );
        assert_eq!(apply_prompt_protocol(&wrapped).unwrap(), wrapped);
        assert!(matches!(
            apply_prompt_protocol("  \t "),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer("Yes."), Answer::Yes);
        assert_eq!(normalize_answer("  no"), Answer::No);
        assert_eq!(normalize_answer("NO, there isn't"), Answer::No);
        assert_eq!(normalize_answer("I think there may be"), Answer::Invalid);
        assert_eq!(normalize_answer("Yesterday"), Answer::Invalid);
        assert_eq!(normalize_answer(""), Answer::Invalid);
        assert_eq!(normalize_answer("- yes"), Answer::Yes);
    }

    #[test]
    fn option_normalization() {
        assert_eq!(normalize_option("(B) a car", 4), Answer::Option(1));
        assert_eq!(normalize_option("a.", 4), Answer::Option(0));
        assert_eq!(normalize_option("E", 4), Answer::Invalid);
        assert_eq!(normalize_option("E", 5), Answer::Option(4));
        assert_eq!(normalize_option("Answer: C", 5), Answer::Invalid);
    }

    #[test]
    fn answer_labels_roundtrip() {
        for a in [Answer::Yes, Answer::No, Answer::Option(3), Answer::Invalid] {
            assert_eq!(a.to_string().parse::<Answer>().unwrap(), a);
        }
        assert!("maybe".parse::<Answer>().is_err());
    }

    #[test]
    fn vocabulary_roundtrip() {
        let v = Vocabulary::standard();
        let text = apply_prompt_protocol("Is there a siren in the audio?").unwrap();
        let ids = v.encode(&text);
        assert!(!ids.contains(&v.id("<unk>")));
        assert_eq!(v.decode(&[YES_TOKEN, NO_TOKEN]), "yes no");
        assert_eq!(v.encode("Yes."), vec![YES_TOKEN, v.id(".")]);
        assert_eq!(v.id("zebra"), v.id("<unk>"));
        assert!(v.len() <= 64);
    }
}
