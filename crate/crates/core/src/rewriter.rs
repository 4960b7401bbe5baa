//! Answer rewriting: inline definitions (parenthetical or appositive) and
//! follow-up prompts offering definitions of the top salient entities.
//!
//! Every rewrite logs its insertions as (offset into the original, text), so
//! deleting them from the rewritten answer recovers the original exactly.

use std::collections::{HashMap, HashSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{truncate_words, ArticleStyle, Definition, KbType, Vitality, DEFAULT_MAX_DESCRIPTION_CHARS};
use crate::linker::EntityMention;
use crate::salience::SpecialCase;
use crate::text::{self, byte_offset};

#[derive(Debug, Error, PartialEq)]
pub enum RewriteError {
    #[error("follow-up rewrite needs at least one target")]
    NoTargets,
    #[error("mention of {entity_id} at {start}..{end} does not match the answer")]
    OffsetInvalid {
        entity_id: String,
        start: usize,
        end: usize,
    },
    #[error("no salience score for {0}")]
    MissingScore(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    InlineWiki,
    InlineNatural,
    FollowupQuestion,
    FollowupOffer,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::InlineWiki,
        Strategy::InlineNatural,
        Strategy::FollowupQuestion,
        Strategy::FollowupOffer,
    ];

    pub fn is_followup(self) -> bool {
        matches!(self, Strategy::FollowupQuestion | Strategy::FollowupOffer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::InlineWiki => "inline-wiki",
            Strategy::InlineNatural => "inline-natural",
            Strategy::FollowupQuestion => "followup-question",
            Strategy::FollowupOffer => "followup-offer",
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "inline-wiki" | "wiki" => Ok(Strategy::InlineWiki),
            "inline-natural" | "natural" | "human" => Ok(Strategy::InlineNatural),
            "followup-question" | "question" => Ok(Strategy::FollowupQuestion),
            "followup-offer" | "offer" => Ok(Strategy::FollowupOffer),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FollowupVariant {
    Question,
    Offer,
}

impl From<FollowupVariant> for Strategy {
    fn from(v: FollowupVariant) -> Self {
        match v {
            FollowupVariant::Question => Strategy::FollowupQuestion,
            FollowupVariant::Offer => Strategy::FollowupOffer,
        }
    }
}

/// Follow-up sentence templates; `{list}` is replaced by the entity labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowupTemplates {
    pub question: String,
    pub offer: String,
}

impl FollowupTemplates {
    /// Phrasing of the reference example rewrites.
    pub fn appendix() -> Self {
        Self {
            question: "Would you like to learn more about {list}?".into(),
            offer: "If you would like to learn more about {list}, feel free to ask!".into(),
        }
    }

    /// Phrasing given in the method description.
    pub fn main_text() -> Self {
        Self {
            question: "Do you want to learn more about {list}?".into(),
            offer: "If you wish to learn more about {list}, feel free to ask.".into(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "appendix" => Some(Self::appendix()),
            "main-text" | "main_text" => Some(Self::main_text()),
            _ => None,
        }
    }

    fn for_variant(&self, v: FollowupVariant) -> &str {
        match v {
            FollowupVariant::Question => &self.question,
            FollowupVariant::Offer => &self.offer,
        }
    }
}

impl Default for FollowupTemplates {
    fn default() -> Self {
        Self::appendix()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteConfig {
    pub templates: FollowupTemplates,
    /// "X, Y, or Z" when true, "X, Y or Z" when false.
    pub serial_comma: bool,
    pub max_definition_chars: usize,
    /// Humans of unknown vitality are introduced with "who was".
    pub historical_figures: bool,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        Self {
            templates: FollowupTemplates::appendix(),
            serial_comma: true,
            max_definition_chars: DEFAULT_MAX_DESCRIPTION_CHARS,
            historical_figures: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub mention: EntityMention,
    pub definition: Definition,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewritePlan {
    pub targets: Vec<Target>,
    pub top_n: usize,
    pub strategy: Strategy,
}

impl RewritePlan {
    pub fn new(strategy: Strategy, top_n: usize, targets: Vec<Target>) -> Result<Self, RewriteError> {
        if top_n == 0 {
            return Err(RewriteError::InvalidPlan("top_n must be at least 1".into()));
        }
        if targets.len() > top_n {
            return Err(RewriteError::InvalidPlan(format!(
                "{} targets exceed top_n {top_n}",
                targets.len()
            )));
        }
        let mut seen = HashSet::new();
        for t in &targets {
            if !seen.insert(t.mention.entity_id.as_str()) {
                return Err(RewriteError::InvalidPlan(format!(
                    "entity {} targeted twice",
                    t.mention.entity_id
                )));
            }
        }
        Ok(Self {
            targets,
            top_n,
            strategy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insertion {
    /// Char offset into the original answer.
    pub offset: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteResult {
    pub original: String,
    pub rewritten: String,
    pub strategy: Strategy,
    /// Targeted entities in rendering order.
    pub targets: Vec<Definition>,
    pub insertions: Vec<Insertion>,
}

impl RewriteResult {
    fn identity(answer: &str, strategy: Strategy) -> Self {
        Self {
            original: answer.to_string(),
            rewritten: answer.to_string(),
            strategy,
            targets: Vec::new(),
            insertions: Vec::new(),
        }
    }

    /// Remove every logged insertion from `rewritten`.
    pub fn reconstruct(&self) -> String {
        let mut sorted: Vec<&Insertion> = self.insertions.iter().collect();
        sorted.sort_by_key(|i| i.offset);
        let mut out = self.rewritten.clone();
        // walk back to front so earlier positions stay put
        let mut shift: usize = sorted.iter().map(|i| text::char_len(&i.text)).sum();
        for ins in sorted.iter().rev() {
            let len = text::char_len(&ins.text);
            shift -= len;
            let at = ins.offset + shift;
            let (Some(b0), Some(b1)) = (byte_offset(&out, at), byte_offset(&out, at + len)) else {
                return out;
            };
            out.replace_range(b0..b1, "");
        }
        out
    }
}

/// Drop special-case entities, keep each entity's first mention, order by
/// score (descending) then first-mention offset, and keep `top_n`.
pub fn select_targets(
    mentions: &[EntityMention],
    scores: &HashMap<String, f64>,
    special_cases: &HashMap<String, SpecialCase>,
    top_n: usize,
) -> Result<Vec<EntityMention>, RewriteError> {
    let mut first: Vec<&EntityMention> = Vec::new();
    let mut seen = HashSet::new();
    let mut by_start: Vec<&EntityMention> = mentions.iter().collect();
    by_start.sort_by_key(|m| m.start);
    for m in by_start {
        if !scores.contains_key(&m.entity_id) {
            return Err(RewriteError::MissingScore(m.entity_id.clone()));
        }
        if seen.insert(m.entity_id.as_str()) {
            first.push(m);
        }
    }
    first.retain(|m| {
        !special_cases
            .get(&m.entity_id)
            .is_some_and(|c| c.is_special())
    });
    first.sort_by(|a, b| {
        scores[&b.entity_id]
            .total_cmp(&scores[&a.entity_id])
            .then(a.start.cmp(&b.start))
    });
    Ok(first.into_iter().take(top_n).cloned().collect())
}

fn check_targets(answer: &str, targets: &[Target]) -> Result<(), RewriteError> {
    for t in targets {
        if !t.mention.is_valid_for(answer) {
            return Err(RewriteError::OffsetInvalid {
                entity_id: t.mention.entity_id.clone(),
                start: t.mention.start,
                end: t.mention.end,
            });
        }
    }
    Ok(())
}

/// Apply insertions in descending offset order so each offset still refers
/// to the original text.
fn apply(answer: &str, strategy: Strategy, targets: Vec<Definition>, mut insertions: Vec<Insertion>) -> RewriteResult {
    insertions.sort_by_key(|i| i.offset);
    let mut rewritten = answer.to_string();
    for ins in insertions.iter().rev() {
        let at = byte_offset(&rewritten, ins.offset).expect("offsets validated against the original");
        rewritten.insert_str(at, &ins.text);
    }
    RewriteResult {
        original: answer.to_string(),
        rewritten,
        strategy,
        targets,
        insertions,
    }
}

/// `e (d)`: the description in parentheses right after the first mention.
pub fn rewrite_inline_wiki(answer: &str, targets: &[Target], config: &RewriteConfig) -> Result<RewriteResult, RewriteError> {
    check_targets(answer, targets)?;
    if targets.is_empty() {
        return Ok(RewriteResult::identity(answer, Strategy::InlineWiki));
    }
    let insertions = targets
        .iter()
        .map(|t| Insertion {
            offset: t.mention.end,
            text: format!(
                " ({})",
                truncate_words(&t.definition.description, config.max_definition_chars)
            ),
        })
        .collect();
    Ok(apply(
        answer,
        Strategy::InlineWiki,
        targets.iter().map(|t| t.definition.clone()).collect(),
        insertions,
    ))
}

const DETERMINERS: &[&str] = &["a", "an", "the", "one", "this", "that", "any", "some"];

fn first_word(s: &str) -> &str {
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("")
}

/// "a" or "an" by the sound of the first word (spelling heuristic).
pub fn indefinite_article(phrase: &str) -> &'static str {
    let w = first_word(phrase).to_lowercase();
    const CONSONANT_SOUND: &[&str] = &[
        "uni", "use", "usa", "usu", "uti", "ubi", "uk", "ukr", "ura", "eu", "ewe", "one", "once",
    ];
    const VOWEL_SOUND_H: &[&str] = &["hour", "honest", "honor", "honour", "heir"];
    if CONSONANT_SOUND.iter().any(|p| w.starts_with(p)) {
        return "a";
    }
    if VOWEL_SOUND_H.iter().any(|p| w.starts_with(p)) {
        return "an";
    }
    match w.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Plural-looking head word ("places", "mammals"); "-ss", "-us", "-is"
/// endings ("class", "genus", "analysis") count as singular.
fn looks_plural(word: &str) -> bool {
    let w = word.to_lowercase();
    w.len() > 3 && w.ends_with('s') && !["ss", "us", "is"].iter().any(|e| w.ends_with(e))
}

/// Turn a KB description into an appositive phrase: "who was/is" for
/// humans, an article unless one is present or the head word looks plural,
/// and a lowercased determiner at the start. Proper-noun starts ("American
/// psychologist") keep their case.
pub fn naturalize(def: &Definition, config: &RewriteConfig) -> String {
    let mut d = truncate_words(&def.description, config.max_definition_chars);
    let fw = first_word(&d).to_string();
    if DETERMINERS.contains(&fw.to_lowercase().as_str()) && fw.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = d.chars();
        let head: String = chars.next().into_iter().flat_map(char::to_lowercase).collect();
        d = head + chars.as_str();
    }
    let has_article = matches!(first_word(&d), "a" | "an" | "the");
    let article = match (def.article, has_article) {
        (_, true) | (Some(ArticleStyle::None), _) => String::new(),
        (Some(ArticleStyle::Definite), false) => "the ".into(),
        (None, false) if looks_plural(first_word(&d)) => String::new(),
        (Some(ArticleStyle::Indefinite) | None, false) => format!("{} ", indefinite_article(&d)),
    };
    let relative = match &def.kb_type {
        Some(KbType::Human(Vitality::Deceased)) => "who was ",
        Some(KbType::Human(Vitality::Living)) => "who is ",
        Some(KbType::Human(Vitality::Unknown)) if config.historical_figures => "who was ",
        Some(KbType::Human(Vitality::Unknown)) => "who is ",
        _ => "",
    };
    format!("{relative}{article}{d}")
}

/// `e, d,`: the description blended in as an appositive after the first
/// mention. The closing comma is dropped before punctuation or at the end.
pub fn rewrite_inline_natural(answer: &str, targets: &[Target], config: &RewriteConfig) -> Result<RewriteResult, RewriteError> {
    check_targets(answer, targets)?;
    if targets.is_empty() {
        return Ok(RewriteResult::identity(answer, Strategy::InlineNatural));
    }
    let insertions = targets
        .iter()
        .map(|t| {
            let next = answer.chars().nth(t.mention.end);
            let closing = match next {
                None | Some('.' | '!' | '?' | ',' | ';' | ':') => "",
                _ => ",",
            };
            Insertion {
                offset: t.mention.end,
                text: format!(", {}{closing}", naturalize(&t.definition, config)),
            }
        })
        .collect();
    Ok(apply(
        answer,
        Strategy::InlineNatural,
        targets.iter().map(|t| t.definition.clone()).collect(),
        insertions,
    ))
}

/// "X", "X or Y", "X, Y, or Z" (or "X, Y or Z" without the serial comma).
pub fn render_list(labels: &[&str], serial_comma: bool) -> String {
    match labels {
        [] => String::new(),
        [one] => one.to_string(),
        [a, b] => format!("{a} or {b}"),
        [init @ .., last] => {
            let sep = if serial_comma { ", or " } else { " or " };
            format!("{}{sep}{last}", init.join(", "))
        }
    }
}

/// Append a follow-up question or offer naming the target entities.
pub fn rewrite_followup(
    answer: &str,
    targets: &[Definition],
    variant: FollowupVariant,
    config: &RewriteConfig,
) -> Result<RewriteResult, RewriteError> {
    if targets.is_empty() {
        return Err(RewriteError::NoTargets);
    }
    let labels: Vec<&str> = targets.iter().map(|d| d.label.as_str()).collect();
    let sentence = config
        .templates
        .for_variant(variant)
        .replace("{list}", &render_list(&labels, config.serial_comma));
    let insertion = Insertion {
        offset: text::char_len(answer),
        text: format!(" {sentence}"),
    };
    Ok(apply(answer, variant.into(), targets.to_vec(), vec![insertion]))
}

/// Dispatch on the plan's strategy.
pub fn rewrite(answer: &str, plan: &RewritePlan, config: &RewriteConfig) -> Result<RewriteResult, RewriteError> {
    match plan.strategy {
        Strategy::InlineWiki => rewrite_inline_wiki(answer, &plan.targets, config),
        Strategy::InlineNatural => rewrite_inline_natural(answer, &plan.targets, config),
        Strategy::FollowupQuestion | Strategy::FollowupOffer => {
            let defs: Vec<Definition> = plan.targets.iter().map(|t| t.definition.clone()).collect();
            let variant = if plan.strategy == Strategy::FollowupQuestion {
                FollowupVariant::Question
            } else {
                FollowupVariant::Offer
            };
            rewrite_followup(answer, &defs, variant, config)
        }
    }
}
