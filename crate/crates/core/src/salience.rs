//! Salience scores on the 0..=2 scale, salient-entity flags, a heuristic
//! predictor for unlabeled answers, and the special-case classifier for
//! salient entities that need no definition.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, MeanStd, StatsError};
use crate::corpus::{SalienceAnnotation, Turn, TurnKey};
use crate::kb::KbType;
use crate::linker::EntityMention;
use crate::text::{self, count_at_token_boundary, normalize, tokenize};

/// An entity is salient when its mean label is strictly above this.
pub const SALIENCE_THRESHOLD: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum SalienceError {
    #[error("no labels to aggregate")]
    EmptyLabels,
    #[error("label {0} outside 0..=2")]
    InvalidLabel(u8),
    #[error("no records")]
    Empty,
    #[error("rankings cover different entity sets")]
    MismatchedSets,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceRecord {
    pub entity_id: String,
    pub turn: TurnKey,
    pub labels: Vec<u8>,
    pub score: f64,
    pub is_salient: bool,
}

impl SalienceRecord {
    pub fn new(entity_id: impl Into<String>, turn: TurnKey, labels: Vec<u8>) -> Result<Self, SalienceError> {
        let (score, is_salient) = aggregate(&labels)?;
        Ok(Self {
            entity_id: entity_id.into(),
            turn,
            labels,
            score,
            is_salient,
        })
    }

    pub fn from_annotation(a: &SalienceAnnotation) -> Result<Self, SalienceError> {
        Self::new(a.entity_id.clone(), a.turn_key(), a.labels.clone())
    }
}

/// Mean label and whether it exceeds [`SALIENCE_THRESHOLD`].
pub fn aggregate(labels: &[u8]) -> Result<(f64, bool), SalienceError> {
    if labels.is_empty() {
        return Err(SalienceError::EmptyLabels);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 2) {
        return Err(SalienceError::InvalidLabel(bad));
    }
    let score = labels.iter().map(|&l| l as f64).sum::<f64>() / labels.len() as f64;
    Ok((score, score > SALIENCE_THRESHOLD))
}

pub fn salient_ratio(records: &[SalienceRecord]) -> Result<f64, SalienceError> {
    if records.is_empty() {
        return Err(SalienceError::Empty);
    }
    let salient = records.iter().filter(|r| r.is_salient).count();
    Ok(salient as f64 / records.len() as f64)
}

/// Mean and population std of |score(t+1) - score(t)| over every entity
/// scored in two consecutive turns of the same conversation.
pub fn turn_salience_drift(records: &[SalienceRecord]) -> Result<MeanStd, StatsError> {
    let mut by_entity: BTreeMap<(&str, &str), BTreeMap<u32, f64>> = BTreeMap::new();
    for r in records {
        by_entity
            .entry((r.turn.conversation_id.as_str(), r.entity_id.as_str()))
            .or_default()
            .insert(r.turn.turn_index, r.score);
    }
    let mut deltas = Vec::new();
    for turns in by_entity.values() {
        for (&t, &s) in turns {
            if let Some(&next) = turns.get(&(t + 1)) {
                deltas.push((next - s).abs());
            }
        }
    }
    MeanStd::of(&deltas).ok_or(StatsError::NoPairs)
}

/// Feature weights for [`predict_salience`]: early position, in-answer
/// frequency, linker confidence and presence in earlier turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SalienceWeights {
    pub position: f64,
    pub frequency: f64,
    pub confidence: f64,
    pub history: f64,
}

impl Default for SalienceWeights {
    fn default() -> Self {
        Self {
            position: 0.35,
            frequency: 0.2,
            confidence: 0.35,
            history: 0.1,
        }
    }
}

impl SalienceWeights {
    pub const ZERO: SalienceWeights = SalienceWeights {
        position: 0.0,
        frequency: 0.0,
        confidence: 0.0,
        history: 0.0,
    };
}

/// Heuristic salience in [0, 2] for answers without crowd labels.
pub fn predict_salience(
    mention: &EntityMention,
    answer: &str,
    history: &[Turn],
    weights: &SalienceWeights,
) -> f64 {
    let len = text::char_len(answer).max(1) as f64;
    let position = 1.0 - (mention.start as f64 / len).min(1.0);
    let surface = normalize(&mention.surface);
    let freq = count_at_token_boundary(&normalize(answer), &surface).max(1);
    let frequency = freq.min(3) as f64 / 3.0;
    let in_history = history.iter().any(|t| {
        count_at_token_boundary(&normalize(&t.question), &surface) > 0
            || count_at_token_boundary(&normalize(&t.answer), &surface) > 0
    });
    let raw = weights.position * position
        + weights.frequency * frequency
        + weights.confidence * mention.confidence
        + weights.history * if in_history { 1.0 } else { 0.0 };
    2.0 * raw.clamp(0.0, 1.0)
}

/// Spearman rho between gold and externally predicted scores, aligned by
/// entity id.
pub fn rank_correlation_with_external(
    gold: &[(String, f64)],
    external: &HashMap<String, f64>,
) -> Result<f64, SalienceError> {
    let gold_ids: HashSet<&str> = gold.iter().map(|(id, _)| id.as_str()).collect();
    let ext_ids: HashSet<&str> = external.keys().map(String::as_str).collect();
    if gold_ids != ext_ids || gold_ids.len() != gold.len() {
        return Err(SalienceError::MismatchedSets);
    }
    let xs: Vec<f64> = gold.iter().map(|(_, s)| *s).collect();
    let ys: Vec<f64> = gold.iter().map(|(id, _)| external[id]).collect();
    Ok(analytics::spearman_rho(&xs, &ys)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpecialCase {
    CommonSense,
    LocationOrNe,
    AlreadyDefined,
    EntityIsAnswer,
    None,
}

impl SpecialCase {
    pub fn is_special(self) -> bool {
        self != SpecialCase::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialCaseRules {
    /// Mentions starting within this many leading answer tokens can be the answer.
    pub answer_head_tokens: usize,
    pub answer_question_words: Vec<String>,
    pub definition_cues: Vec<String>,
    /// Chars after the mention searched for a definitional cue.
    pub cue_window_chars: usize,
    /// Popularity at or above which an entity is common knowledge.
    pub common_sense_popularity: Option<f64>,
}

impl Default for SpecialCaseRules {
    fn default() -> Self {
        Self {
            answer_head_tokens: 3,
            answer_question_words: ["who", "what", "which", "where"].map(String::from).to_vec(),
            definition_cues: ["i.e.", ", which is", ", a ", ", an ", ", the ", "that is,", "means "]
                .map(String::from)
                .to_vec(),
            cue_window_chars: 100,
            common_sense_popularity: None,
        }
    }
}

/// First matching rule wins: entity-is-answer, already-defined,
/// location/named entity, common sense.
pub fn classify_special_case(
    mention: &EntityMention,
    answer: &str,
    question: &str,
    kb_type: Option<&KbType>,
    popularity: Option<f64>,
    rules: &SpecialCaseRules,
) -> SpecialCase {
    let token_index = tokenize(answer).iter().take_while(|t| t.end <= mention.start).count();
    let first_q = tokenize(question)
        .first()
        .and_then(|t| text::char_slice(question, t.start, t.end))
        .map(|w| w.to_lowercase());
    if token_index < rules.answer_head_tokens
        && first_q.is_some_and(|w| rules.answer_question_words.contains(&w))
    {
        return SpecialCase::EntityIsAnswer;
    }

    let window: String = answer
        .chars()
        .skip(mention.end)
        .take(rules.cue_window_chars)
        .collect::<String>()
        .to_lowercase();
    if rules.definition_cues.iter().any(|c| window.contains(&c.to_lowercase())) {
        return SpecialCase::AlreadyDefined;
    }

    if matches!(
        kb_type,
        Some(KbType::GeographicLocation | KbType::Human(_) | KbType::Organization)
    ) {
        return SpecialCase::LocationOrNe;
    }

    if let (Some(p), Some(t)) = (popularity, rules.common_sense_popularity) {
        if p >= t {
            return SpecialCase::CommonSense;
        }
    }
    SpecialCase::None
}
