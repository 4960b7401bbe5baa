//! Conversations, salience annotations and preference annotations, with
//! JSON-Lines loaders that validate every record.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("duplicate conversation id {0:?}")]
    DuplicateId(String),
    #[error("line {line_no}: invalid salience label {value}")]
    InvalidLabel { line_no: usize, value: i64 },
    #[error("line {line_no}: choice {choice} out of range for {options} options")]
    OutOfRange {
        line_no: usize,
        choice: usize,
        options: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Cast,
    Nq,
    Quac,
    #[default]
    Other,
}

impl Source {
    /// Lenient parse used by the ingest path; unknown labels map to `Other`.
    pub fn parse_loose(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "cast" | "trec" | "trec_cast" | "trec-cast" => Source::Cast,
            "nq" | "natural_questions" => Source::Nq,
            "quac" => Source::Quac,
            _ => Source::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: u32,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    #[serde(default)]
    pub source: Source,
    pub turns: Vec<Turn>,
}

/// Identifies one turn of one conversation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TurnKey {
    pub conversation_id: String,
    pub turn_index: u32,
}

impl TurnKey {
    pub fn new(conversation_id: impl Into<String>, turn_index: u32) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            turn_index,
        }
    }
}

impl std::fmt::Display for TurnKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.conversation_id, self.turn_index)
    }
}

/// Crowd labels for one entity in one answer. Label 2 = essential,
/// 1 = important, 0 = not important.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceAnnotation {
    pub conversation_id: String,
    pub turn_index: u32,
    pub entity_id: String,
    pub surface: String,
    pub labels: Vec<u8>,
}

impl SalienceAnnotation {
    pub fn turn_key(&self) -> TurnKey {
        TurnKey::new(self.conversation_id.clone(), self.turn_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RewriteOption {
    Original,
    InlinedefWiki,
    InlinedefNatural,
    FollowupQuestion,
    FollowupOffer,
}

/// Which column of a preference table an option is counted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionFamily {
    Original,
    Inline,
    Followup,
}

impl RewriteOption {
    pub fn family(self) -> OptionFamily {
        match self {
            RewriteOption::Original => OptionFamily::Original,
            RewriteOption::InlinedefWiki | RewriteOption::InlinedefNatural => OptionFamily::Inline,
            RewriteOption::FollowupQuestion | RewriteOption::FollowupOffer => {
                OptionFamily::Followup
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceAnnotation {
    pub qa_id: String,
    pub options_shown: Vec<RewriteOption>,
    pub choice: usize,
    #[serde(default)]
    pub reason: String,
    pub top_n: u8,
}

impl PreferenceAnnotation {
    pub fn chosen(&self) -> RewriteOption {
        self.options_shown[self.choice]
    }

    /// The inline and follow-up variants shown, if the record has one of each.
    pub fn variants(&self) -> Option<(RewriteOption, RewriteOption)> {
        let inline = self
            .options_shown
            .iter()
            .copied()
            .find(|o| o.family() == OptionFamily::Inline)?;
        let followup = self
            .options_shown
            .iter()
            .copied()
            .find(|o| o.family() == OptionFamily::Followup)?;
        Some((inline, followup))
    }

    fn validate(&self, line_no: usize) -> Result<(), CorpusError> {
        let n = self.options_shown.len();
        let distinct: HashSet<_> = self.options_shown.iter().collect();
        if n != 3 || distinct.len() != 3 {
            return Err(CorpusError::MalformedLine {
                line_no,
                reason: "options_shown must hold 3 distinct options".into(),
            });
        }
        let families: HashSet<_> = self.options_shown.iter().map(|o| o.family()).collect();
        if families.len() != 3 {
            return Err(CorpusError::MalformedLine {
                line_no,
                reason: "options_shown must contain one original, one inline and one follow-up option"
                    .into(),
            });
        }
        if self.choice >= n {
            return Err(CorpusError::OutOfRange {
                line_no,
                choice: self.choice,
                options: n,
            });
        }
        if !(1..=3).contains(&self.top_n) {
            return Err(CorpusError::MalformedLine {
                line_no,
                reason: format!("top_n {} not in 1..=3", self.top_n),
            });
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Yields (1-based line number, parsed record) for every non-blank line.
fn parse_lines<T: DeserializeOwned>(
    content: &str,
) -> impl Iterator<Item = Result<(usize, T), CorpusError>> + '_ {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<T>(l)
                .map(|v| (i + 1, v))
                .map_err(|e| CorpusError::MalformedLine {
                    line_no: i + 1,
                    reason: e.to_string(),
                })
        })
}

pub fn parse_corpus(content: &str) -> Result<Vec<Conversation>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in parse_lines::<Conversation>(content) {
        let (line_no, conv) = item?;
        if conv.conversation_id.trim().is_empty() {
            return Err(CorpusError::MalformedLine {
                line_no,
                reason: "empty conversation_id".into(),
            });
        }
        if conv.turns.is_empty() {
            return Err(CorpusError::MalformedLine {
                line_no,
                reason: "conversation has no turns".into(),
            });
        }
        for (i, turn) in conv.turns.iter().enumerate() {
            if turn.turn_index as usize != i + 1 {
                return Err(CorpusError::MalformedLine {
                    line_no,
                    reason: format!(
                        "turn indices must be contiguous from 1; found {} at position {}",
                        turn.turn_index,
                        i + 1
                    ),
                });
            }
            if turn.question.trim().is_empty() || turn.answer.trim().is_empty() {
                return Err(CorpusError::MalformedLine {
                    line_no,
                    reason: format!("turn {} has an empty question or answer", turn.turn_index),
                });
            }
        }
        if !seen.insert(conv.conversation_id.clone()) {
            return Err(CorpusError::DuplicateId(conv.conversation_id));
        }
        out.push(conv);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Conversation>, CorpusError> {
    parse_corpus(&read(path)?)
}

pub fn parse_salience_annotations(content: &str) -> Result<Vec<SalienceAnnotation>, CorpusError> {
    #[derive(Deserialize)]
    struct Raw {
        conversation_id: String,
        turn_index: u32,
        entity_id: String,
        surface: String,
        labels: Vec<i64>,
    }
    let mut out = Vec::new();
    for item in parse_lines::<Raw>(content) {
        let (line_no, raw) = item?;
        if raw.labels.is_empty() {
            return Err(CorpusError::InvalidLabel { line_no, value: -1 });
        }
        let mut labels = Vec::with_capacity(raw.labels.len());
        for v in raw.labels {
            if !(0..=2).contains(&v) {
                return Err(CorpusError::InvalidLabel { line_no, value: v });
            }
            labels.push(v as u8);
        }
        out.push(SalienceAnnotation {
            conversation_id: raw.conversation_id,
            turn_index: raw.turn_index,
            entity_id: raw.entity_id,
            surface: raw.surface,
            labels,
        });
    }
    Ok(out)
}

pub fn load_salience_annotations(path: &Path) -> Result<Vec<SalienceAnnotation>, CorpusError> {
    parse_salience_annotations(&read(path)?)
}

pub fn parse_preferences(content: &str) -> Result<Vec<PreferenceAnnotation>, CorpusError> {
    let mut out = Vec::new();
    for item in parse_lines::<PreferenceAnnotation>(content) {
        let (line_no, rec) = item?;
        rec.validate(line_no)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_preferences(path: &Path) -> Result<Vec<PreferenceAnnotation>, CorpusError> {
    parse_preferences(&read(path)?)
}

/// Serialize records as JSON Lines.
pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Group salience annotations by turn, keeping first-seen turn order and
/// file order within each turn.
pub fn group_by_turn(annotations: &[SalienceAnnotation]) -> Vec<(TurnKey, Vec<&SalienceAnnotation>)> {
    let mut groups: Vec<(TurnKey, Vec<&SalienceAnnotation>)> = Vec::new();
    let mut index: std::collections::HashMap<TurnKey, usize> = std::collections::HashMap::new();
    for a in annotations {
        let key = a.turn_key();
        match index.get(&key) {
            Some(&i) => groups[i].1.push(a),
            None => {
                index.insert(key.clone(), groups.len());
                groups.push((key, vec![a]));
            }
        }
    }
    groups
}

/// Convert the QReCC release format (a JSON array of per-turn records) into
/// conversations. Turns are renumbered contiguously in file order.
pub fn parse_qrecc(content: &str) -> Result<Vec<Conversation>, CorpusError> {
    #[derive(Deserialize)]
    struct QreccTurn {
        #[serde(rename = "Conversation_no")]
        conversation_no: serde_json::Value,
        #[serde(rename = "Turn_no")]
        turn_no: u32,
        #[serde(rename = "Question")]
        question: String,
        #[serde(rename = "Answer", alias = "Truth_answer")]
        answer: String,
        #[serde(rename = "Conversation_source", default)]
        source: Option<String>,
    }
    let rows: Vec<QreccTurn> =
        serde_json::from_str(content).map_err(|e| CorpusError::MalformedLine {
            line_no: e.line(),
            reason: e.to_string(),
        })?;
    let mut convs: Vec<Conversation> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut rows_sorted: Vec<_> = rows.into_iter().enumerate().collect();
    // stable: by conversation first appearance, then Turn_no
    let mut first_seen = std::collections::HashMap::new();
    for (i, r) in &rows_sorted {
        let id = id_string(&r.conversation_no);
        first_seen.entry(id).or_insert(*i);
    }
    rows_sorted.sort_by_key(|(i, r)| {
        let id = id_string(&r.conversation_no);
        (first_seen[&id], r.turn_no, *i)
    });
    for (_, r) in rows_sorted {
        if r.question.trim().is_empty() || r.answer.trim().is_empty() {
            continue;
        }
        let id = id_string(&r.conversation_no);
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            convs.push(Conversation {
                conversation_id: id.clone(),
                source: r.source.as_deref().map(Source::parse_loose).unwrap_or_default(),
                turns: Vec::new(),
            });
            convs.len() - 1
        });
        let conv = &mut convs[slot];
        let turn_index = conv.turns.len() as u32 + 1;
        conv.turns.push(Turn {
            turn_index,
            question: r.question,
            answer: r.answer,
        });
    }
    Ok(convs)
}

fn id_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
