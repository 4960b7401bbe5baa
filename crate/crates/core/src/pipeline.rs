//! End-to-end turn processing: link, filter, score, classify, select and
//! rewrite. Also the interactive session behind the `chat` command.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Conversation, Turn, TurnKey};
use crate::dialogue::{open_followup, DialogueError, FollowUpState, Outcome};
use crate::kb::{Definition, KbError, KnowledgeBase};
use crate::linker::{self, EntityMention, LinkError, QuestionFilter, RemoteLinker, SurfaceFormDictionary};
use crate::rewriter::{self, RewriteConfig, RewriteError, RewritePlan, RewriteResult, Strategy, Target};
use crate::salience::{classify_special_case, predict_salience, SalienceWeights, SpecialCase, SpecialCaseRules};
use crate::text::{char_slice, tokenize};

/// Share of snapshot entities (by popularity) treated as common knowledge.
pub const COMMON_SENSE_TOP_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
}

pub enum LinkerBackend {
    Local(SurfaceFormDictionary),
    Remote(RemoteLinker),
}

impl LinkerBackend {
    pub fn link(&self, text: &str, threshold: f64) -> Result<Vec<EntityMention>, LinkError> {
        match self {
            LinkerBackend::Local(dict) => linker::link(text, dict, threshold),
            LinkerBackend::Remote(client) => client.link(text, threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub threshold: f64,
    pub question_filter: QuestionFilter,
    pub top_n: usize,
    pub weights: SalienceWeights,
    pub rules: SpecialCaseRules,
    pub rewrite: RewriteConfig,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            threshold: linker::DEFAULT_THRESHOLD,
            question_filter: QuestionFilter::default(),
            top_n: 3,
            weights: SalienceWeights::default(),
            rules: SpecialCaseRules::default(),
            rewrite: RewriteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMention {
    pub mention: EntityMention,
    pub score: f64,
    pub special_case: SpecialCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteStatus {
    Ok,
    NoTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRewrite {
    pub status: RewriteStatus,
    #[serde(flatten)]
    pub result: RewriteResult,
    /// Selected entities dropped because no definition was found.
    pub missing_definitions: Vec<String>,
}

pub struct Pipeline {
    linker: LinkerBackend,
    kb: KnowledgeBase,
    options: PipelineOptions,
}

impl Pipeline {
    /// When the rules carry no common-sense cutoff, it is derived from the
    /// snapshot's popularity column.
    pub fn new(linker: LinkerBackend, kb: KnowledgeBase, mut options: PipelineOptions) -> Self {
        if options.rules.common_sense_popularity.is_none() {
            options.rules.common_sense_popularity = kb.popularity_threshold(COMMON_SENSE_TOP_FRACTION);
        }
        Self { linker, kb, options }
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    /// Answer mentions minus entities already named in the question.
    pub fn link_turn(&self, question: &str, answer: &str) -> Result<Vec<EntityMention>, PipelineError> {
        let mentions = self.linker.link(answer, self.options.threshold)?;
        let filter = self.options.question_filter;
        if filter.is_off() {
            return Ok(mentions);
        }
        let question_mentions = if filter.by_entity {
            self.linker.link(question, self.options.threshold)?
        } else {
            Vec::new()
        };
        Ok(filter.apply(mentions, question, &question_mentions))
    }

    fn lookup(&self, entity_id: &str) -> Result<Option<Definition>, KbError> {
        match self.kb.get_definition(entity_id) {
            Ok(d) => Ok(Some(d)),
            Err(KbError::NotFound(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Score every mention (gold score when given, else predicted) and
    /// classify special cases.
    pub fn score_turn(
        &self,
        question: &str,
        answer: &str,
        mentions: &[EntityMention],
        history: &[Turn],
        gold: Option<&HashMap<String, f64>>,
    ) -> Result<Vec<ScoredMention>, PipelineError> {
        let mut out = Vec::with_capacity(mentions.len());
        for m in mentions {
            let def = self.lookup(&m.entity_id)?;
            let score = gold
                .and_then(|g| g.get(&m.entity_id).copied())
                .unwrap_or_else(|| predict_salience(m, answer, history, &self.options.weights));
            let special_case = classify_special_case(
                m,
                answer,
                question,
                def.as_ref().and_then(|d| d.kb_type.as_ref()),
                def.as_ref().and_then(|d| d.popularity),
                &self.options.rules,
            );
            out.push(ScoredMention {
                mention: m.clone(),
                score,
                special_case,
            });
        }
        Ok(out)
    }

    /// Select the top entities and attach definitions. Returns the plan and
    /// the selected entity ids that had no definition.
    pub fn plan(&self, scored: &[ScoredMention], strategy: Strategy) -> Result<(RewritePlan, Vec<String>), PipelineError> {
        // the first mention's classification stands for the entity
        let mut special = HashMap::new();
        let mut scores = HashMap::new();
        let mut ordered: Vec<&ScoredMention> = scored.iter().collect();
        ordered.sort_by_key(|s| s.mention.start);
        for s in ordered {
            special.entry(s.mention.entity_id.clone()).or_insert(s.special_case);
            scores.entry(s.mention.entity_id.clone()).or_insert(s.score);
        }
        let mentions: Vec<EntityMention> = scored.iter().map(|s| s.mention.clone()).collect();
        let selected = rewriter::select_targets(&mentions, &scores, &special, self.options.top_n)?;
        let mut targets = Vec::new();
        let mut missing = Vec::new();
        for m in selected {
            match self.lookup(&m.entity_id)? {
                Some(definition) => targets.push(Target {
                    score: scores[&m.entity_id],
                    mention: m,
                    definition,
                }),
                None => missing.push(m.entity_id),
            }
        }
        Ok((RewritePlan::new(strategy, self.options.top_n, targets)?, missing))
    }

    pub fn rewrite_scored(&self, answer: &str, scored: &[ScoredMention], strategy: Strategy) -> Result<TurnRewrite, PipelineError> {
        let (plan, missing_definitions) = self.plan(scored, strategy)?;
        if plan.targets.is_empty() {
            return Ok(TurnRewrite {
                status: RewriteStatus::NoTargets,
                result: RewriteResult {
                    original: answer.to_string(),
                    rewritten: answer.to_string(),
                    strategy,
                    targets: Vec::new(),
                    insertions: Vec::new(),
                },
                missing_definitions,
            });
        }
        let result = rewriter::rewrite(answer, &plan, &self.options.rewrite)?;
        Ok(TurnRewrite {
            status: RewriteStatus::Ok,
            result,
            missing_definitions,
        })
    }

    /// Link (unless mentions are supplied), score and rewrite one turn.
    pub fn rewrite_turn(
        &self,
        question: &str,
        answer: &str,
        history: &[Turn],
        mentions: Option<&[EntityMention]>,
        gold: Option<&HashMap<String, f64>>,
        strategy: Strategy,
    ) -> Result<TurnRewrite, PipelineError> {
        let linked;
        let mentions = match mentions {
            Some(m) => m,
            None => {
                linked = self.link_turn(question, answer)?;
                &linked
            }
        };
        let scored = self.score_turn(question, answer, mentions, history, gold)?;
        self.rewrite_scored(answer, &scored, strategy)
    }
}

/// Lowercased tokens joined by single spaces; punctuation is ignored.
fn question_key(q: &str) -> String {
    tokenize(q)
        .iter()
        .filter_map(|t| char_slice(q, t.start, t.end))
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Where the chat session gets its answers.
pub enum AnswerSource {
    /// Repeat the user's line as the answer.
    Echo,
    /// Look the question up among known turns, ignoring case and punctuation.
    Scripted(HashMap<String, String>),
}

impl AnswerSource {
    pub fn from_corpus(convs: &[Conversation]) -> Self {
        let mut map = HashMap::new();
        for c in convs {
            for t in &c.turns {
                map.entry(question_key(&t.question)).or_insert_with(|| t.answer.clone());
            }
        }
        AnswerSource::Scripted(map)
    }

    fn answer(&self, question: &str) -> Option<String> {
        match self {
            AnswerSource::Echo => Some(question.to_string()),
            AnswerSource::Scripted(map) => map.get(&question_key(question)).cloned(),
        }
    }
}

pub const UNKNOWN_ANSWER: &str = "Sorry, I don't have an answer to that.";

#[derive(Debug, Clone, PartialEq)]
pub enum ChatReply {
    /// The user accepted an offer.
    Definition { entity_id: String, text: String },
    Answer { text: String, rewrite: Option<TurnRewrite> },
}

impl ChatReply {
    pub fn text(&self) -> &str {
        match self {
            ChatReply::Definition { text, .. } | ChatReply::Answer { text, .. } => text,
        }
    }
}

pub struct ChatSession<'a> {
    pipeline: &'a Pipeline,
    strategy: Strategy,
    answers: AnswerSource,
    pending: Option<FollowUpState>,
    history: Vec<Turn>,
}

impl<'a> ChatSession<'a> {
    pub fn new(pipeline: &'a Pipeline, strategy: Strategy, answers: AnswerSource) -> Self {
        Self {
            pipeline,
            strategy,
            answers,
            pending: None,
            history: Vec::new(),
        }
    }

    pub fn pending_offer(&self) -> Option<&FollowUpState> {
        self.pending.as_ref()
    }

    /// Handle one user line. An open offer is consulted first and expires
    /// after this line whatever the outcome.
    pub fn handle(&mut self, line: &str) -> Result<ChatReply, PipelineError> {
        if let Some(mut offer) = self.pending.take() {
            if let Outcome::Define { entity_id, response } = offer.interpret_user_turn(line)? {
                return Ok(ChatReply::Definition {
                    entity_id,
                    text: response,
                });
            }
        }
        let turn_index = self.history.len() as u32 + 1;
        let Some(answer) = self.answers.answer(line) else {
            return Ok(ChatReply::Answer {
                text: UNKNOWN_ANSWER.to_string(),
                rewrite: None,
            });
        };
        let rewrite = self
            .pipeline
            .rewrite_turn(line, &answer, &self.history, None, None, self.strategy)?;
        if self.strategy.is_followup() && rewrite.status == RewriteStatus::Ok {
            self.pending = Some(open_followup(&rewrite.result, TurnKey::new("chat", turn_index))?);
        }
        self.history.push(Turn {
            turn_index,
            question: line.to_string(),
            answer: answer.clone(),
        });
        Ok(ChatReply::Answer {
            text: rewrite.result.rewritten.clone(),
            rewrite: Some(rewrite),
        })
    }
}
