//! Follow-up offers as one-turn dialogue state: after a follow-up rewrite,
//! the next user utterance either asks for one of the offered definitions or
//! the offer lapses and the conversation carries on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TurnKey;
use crate::kb::Definition;
use crate::rewriter::{rewrite_followup, FollowupVariant, RewriteConfig, RewriteError, RewriteResult};
use crate::text::{char_slice, contains_at_token_boundary, normalize, tokenize};

pub const DEFAULT_AFFIRMATIVES: &[&str] = &["yes", "sure", "ok", "yes please"];

#[derive(Debug, Error, PartialEq)]
pub enum DialogueError {
    #[error("rewrite strategy {0} does not make an offer")]
    WrongStrategy(String),
    #[error("follow-up offer already resolved")]
    AlreadyResolved,
    #[error("script line {line_no}: {reason}")]
    Script { line_no: usize, reason: String },
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub entity_id: String,
    pub label: String,
    pub definition: Definition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowUpState {
    offered: Vec<Offer>,
    issued_turn: TurnKey,
    resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Define { entity_id: String, response: String },
    PassThrough { utterance: String },
}

/// Start tracking the offer made by a follow-up rewrite.
pub fn open_followup(rewrite: &RewriteResult, issued_turn: TurnKey) -> Result<FollowUpState, DialogueError> {
    if !rewrite.strategy.is_followup() {
        return Err(DialogueError::WrongStrategy(rewrite.strategy.to_string()));
    }
    if rewrite.targets.is_empty() {
        return Err(RewriteError::NoTargets.into());
    }
    Ok(FollowUpState {
        offered: rewrite
            .targets
            .iter()
            .map(|d| Offer {
                entity_id: d.entity_id.clone(),
                label: d.label.clone(),
                definition: d.clone(),
            })
            .collect(),
        issued_turn,
        resolved: false,
    })
}

/// "{label}: {description}."
pub fn definition_response(def: &Definition) -> String {
    format!("{}: {}.", def.label, def.description)
}

/// Tokens of the utterance joined by single spaces, lowercased.
fn bare_form(utterance: &str) -> String {
    tokenize(utterance)
        .iter()
        .filter_map(|t| char_slice(utterance, t.start, t.end))
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl FollowUpState {
    pub fn offered(&self) -> &[Offer] {
        &self.offered
    }

    pub fn issued_turn(&self) -> &TurnKey {
        &self.issued_turn
    }

    pub fn is_resolved(&self) -> bool {
        self.resolved
    }

    pub fn interpret_user_turn(&mut self, utterance: &str) -> Result<Outcome, DialogueError> {
        self.interpret_with(utterance, DEFAULT_AFFIRMATIVES)
    }

    /// Resolve the offer against the next user utterance. A named label
    /// (first offered wins when several match) or, with a single offer, a
    /// bare affirmative yields the definition; anything else lets the offer
    /// lapse and passes the utterance through untouched.
    pub fn interpret_with(&mut self, utterance: &str, affirmatives: &[&str]) -> Result<Outcome, DialogueError> {
        if self.resolved {
            return Err(DialogueError::AlreadyResolved);
        }
        self.resolved = true;
        let norm = normalize(utterance);
        let named = self
            .offered
            .iter()
            .find(|o| contains_at_token_boundary(&norm, &normalize(&o.label)));
        let chosen = named.or_else(|| {
            let bare = bare_form(utterance);
            (self.offered.len() == 1 && affirmatives.iter().any(|a| *a == bare)).then(|| &self.offered[0])
        });
        Ok(match chosen {
            Some(o) => Outcome::Define {
                entity_id: o.entity_id.clone(),
                response: definition_response(&o.definition),
            },
            None => Outcome::PassThrough {
                utterance: utterance.to_string(),
            },
        })
    }
}

/// One line of a scripted dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ScriptLine {
    System {
        answer: String,
        variant: FollowupVariant,
        offers: Vec<Definition>,
    },
    User {
        utterance: String,
        expect: Expectation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Expectation {
    Define { entity_id: String },
    PassThrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub line_no: usize,
    pub utterance: String,
    pub expected: Expectation,
    pub actual: Outcome,
    pub passed: bool,
}

/// Run a JSONL dialogue script. System lines issue a follow-up rewrite and
/// open an offer; user lines are interpreted against the open offer (or pass
/// through when none is open) and compared with their expectation.
pub fn run_script(content: &str, config: &RewriteConfig) -> Result<Vec<ScriptStep>, DialogueError> {
    let mut state: Option<FollowUpState> = None;
    let mut steps = Vec::new();
    let mut turn = 0u32;
    for (i, raw) in content.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: ScriptLine = serde_json::from_str(raw).map_err(|e| DialogueError::Script {
            line_no,
            reason: e.to_string(),
        })?;
        match line {
            ScriptLine::System { answer, variant, offers } => {
                turn += 1;
                let rewrite = rewrite_followup(&answer, &offers, variant, config)?;
                state = Some(open_followup(&rewrite, TurnKey::new("script", turn))?);
            }
            ScriptLine::User { utterance, expect } => {
                let actual = match state.take() {
                    Some(mut s) => s.interpret_user_turn(&utterance)?,
                    None => Outcome::PassThrough {
                        utterance: utterance.clone(),
                    },
                };
                let passed = match (&expect, &actual) {
                    (Expectation::Define { entity_id }, Outcome::Define { entity_id: got, .. }) => entity_id == got,
                    (Expectation::PassThrough, Outcome::PassThrough { utterance: u }) => *u == utterance,
                    _ => false,
                };
                steps.push(ScriptStep {
                    line_no,
                    utterance,
                    expected: expect,
                    actual,
                    passed,
                });
            }
        }
    }
    Ok(steps)
}
