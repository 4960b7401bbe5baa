//! Entity mention detection: a local surface-form dictionary linker, a client
//! for WAT-style annotation services, and the question-entity filter.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::{self, char_slice, contains_at_token_boundary, normalize, tokenize};

pub const DEFAULT_THRESHOLD: f64 = 0.45;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dictionary line {line_no}: {reason}")]
    Dictionary { line_no: usize, reason: String },
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("network error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Network { status: Option<u16>, message: String },
    #[error("unexpected linker response: {0}")]
    Parse(String),
}

/// A linked span of an answer. Offsets are char offsets, `end` exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity_id: String,
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

impl EntityMention {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn overlaps(&self, other: &EntityMention) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// `answer[start..end] == surface` and the offsets are in range.
    pub fn is_valid_for(&self, answer: &str) -> bool {
        self.start < self.end && char_slice(answer, self.start, self.end) == Some(self.surface.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: String,
    pub commonness: f64,
}

/// Normalized surface form -> candidate entities with link probabilities.
#[derive(Debug, Clone, Default)]
pub struct SurfaceFormDictionary {
    entries: HashMap<String, Vec<Candidate>>,
    max_tokens: usize,
}

impl SurfaceFormDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a candidate. The surface is normalized on the way in.
    pub fn insert(&mut self, surface: &str, entity_id: impl Into<String>, commonness: f64) {
        let key = normalize(surface);
        let ntok = tokenize(&key).len();
        self.max_tokens = self.max_tokens.max(ntok);
        self.entries.entry(key).or_default().push(Candidate {
            entity_id: entity_id.into(),
            commonness,
        });
    }

    /// Parse the TSV snapshot: `surface \t entity_id \t commonness`.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn from_tsv(content: &str) -> Result<Self, LinkError> {
        let mut dict = Self::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(LinkError::Dictionary {
                    line_no,
                    reason: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            }
            let commonness: f64 = cols[2].trim().parse().map_err(|_| LinkError::Dictionary {
                line_no,
                reason: format!("bad commonness {:?}", cols[2]),
            })?;
            if !(0.0..=1.0).contains(&commonness) {
                return Err(LinkError::Dictionary {
                    line_no,
                    reason: format!("commonness {commonness} outside [0, 1]"),
                });
            }
            if cols[0].trim().is_empty() || cols[1].trim().is_empty() {
                return Err(LinkError::Dictionary {
                    line_no,
                    reason: "empty surface or entity id".into(),
                });
            }
            dict.insert(cols[0], cols[1].trim(), commonness);
            let total: f64 = dict.entries[&normalize(cols[0])]
                .iter()
                .map(|c| c.commonness)
                .sum();
            if total > 1.0 + 1e-9 {
                return Err(LinkError::Dictionary {
                    line_no,
                    reason: format!("commonness for {:?} sums to {total} > 1", cols[0]),
                });
            }
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self, LinkError> {
        let content = std::fs::read_to_string(path).map_err(|source| LinkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_tsv(&content)
    }

    pub fn candidates(&self, normalized_surface: &str) -> Option<&[Candidate]> {
        self.entries.get(normalized_surface).map(Vec::as_slice)
    }

    /// Highest-commonness candidate; ties go to the smaller entity id.
    pub fn best(&self, normalized_surface: &str) -> Option<&Candidate> {
        self.candidates(normalized_surface)?.iter().max_by(|a, b| {
            a.commonness
                .total_cmp(&b.commonness)
                .then_with(|| b.entity_id.cmp(&a.entity_id))
        })
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Every token span of `answer` whose normalized text is a dictionary key,
/// labelled with its best candidate. No threshold or overlap handling.
pub fn candidate_spans(answer: &str, dict: &SurfaceFormDictionary) -> Vec<EntityMention> {
    let tokens = tokenize(answer);
    let max = dict.max_tokens();
    let mut out = Vec::new();
    for i in 0..tokens.len() {
        for j in i..tokens.len().min(i + max) {
            let (start, end) = (tokens[i].start, tokens[j].end);
            let surface = char_slice(answer, start, end).expect("token offsets are in range");
            if let Some(best) = dict.best(&normalize(surface)) {
                out.push(EntityMention {
                    entity_id: best.entity_id.clone(),
                    surface: surface.to_string(),
                    start,
                    end,
                    confidence: best.commonness,
                });
            }
        }
    }
    out
}

/// Order in which overlapping spans claim text: longer first, then earlier
/// start, then higher confidence, then entity id.
pub fn overlap_priority(a: &EntityMention, b: &EntityMention) -> std::cmp::Ordering {
    b.len()
        .cmp(&a.len())
        .then(a.start.cmp(&b.start))
        .then(b.confidence.total_cmp(&a.confidence))
        .then_with(|| a.entity_id.cmp(&b.entity_id))
}

/// Keep a non-overlapping subset by greedy acceptance in priority order,
/// returned sorted by start offset.
pub fn resolve_overlaps(mut mentions: Vec<EntityMention>) -> Vec<EntityMention> {
    mentions.sort_by(overlap_priority);
    let mut kept: Vec<EntityMention> = Vec::with_capacity(mentions.len());
    for m in mentions {
        if kept.iter().all(|k| !k.overlaps(&m)) {
            kept.push(m);
        }
    }
    kept.sort_by_key(|m| m.start);
    kept
}

fn check_threshold(threshold: f64) -> Result<(), LinkError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(LinkError::Threshold(threshold))
    }
}

fn finalize(candidates: Vec<EntityMention>, threshold: f64) -> Vec<EntityMention> {
    resolve_overlaps(candidates)
        .into_iter()
        .filter(|m| m.confidence >= threshold)
        .collect()
}

/// Link `answer` against the local dictionary.
///
/// Overlaps are resolved before the threshold is applied, so raising the
/// threshold can only remove mentions.
pub fn link(
    answer: &str,
    dict: &SurfaceFormDictionary,
    threshold: f64,
) -> Result<Vec<EntityMention>, LinkError> {
    check_threshold(threshold)?;
    Ok(finalize(candidate_spans(answer, dict), threshold))
}

/// Remove mentions of entities the question already names, either by entity
/// identity (same id linked in the question) or by surface (the mention's
/// normalized surface occurs at token boundaries in the normalized question).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionFilter {
    pub by_entity: bool,
    pub by_surface: bool,
}

impl Default for QuestionFilter {
    fn default() -> Self {
        Self {
            by_entity: true,
            by_surface: true,
        }
    }
}

impl QuestionFilter {
    pub const OFF: QuestionFilter = QuestionFilter {
        by_entity: false,
        by_surface: false,
    };

    pub fn is_off(&self) -> bool {
        !self.by_entity && !self.by_surface
    }

    pub fn apply(
        &self,
        mentions: Vec<EntityMention>,
        question: &str,
        question_mentions: &[EntityMention],
    ) -> Vec<EntityMention> {
        let ids: HashSet<&str> = if self.by_entity {
            question_mentions.iter().map(|m| m.entity_id.as_str()).collect()
        } else {
            HashSet::new()
        };
        let q = normalize(question);
        mentions
            .into_iter()
            .filter(|m| {
                let by_id = ids.contains(m.entity_id.as_str());
                let by_surface =
                    self.by_surface && contains_at_token_boundary(&q, &normalize(&m.surface));
                !(by_id || by_surface)
            })
            .collect()
    }
}

pub fn filter_question_entities(
    mentions: Vec<EntityMention>,
    question: &str,
    question_mentions: &[EntityMention],
) -> Vec<EntityMention> {
    QuestionFilter::default().apply(mentions, question, question_mentions)
}

#[derive(Debug, Clone)]
pub struct RemoteLinkerConfig {
    pub endpoint: String,
    pub lang: String,
    pub timeout: Duration,
    /// Extra attempts after the first, on timeouts and 5xx responses.
    pub retries: u32,
    /// Additional query parameters, e.g. an access token.
    pub extra_params: Vec<(String, String)>,
}

impl RemoteLinkerConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            lang: "en".into(),
            timeout: Duration::from_secs(10),
            retries: 2,
            extra_params: Vec::new(),
        }
    }
}

/// Blocking client for a WAT-compatible annotation endpoint.
pub struct RemoteLinker {
    config: RemoteLinkerConfig,
    client: reqwest::blocking::Client,
}

impl RemoteLinker {
    pub fn new(config: RemoteLinkerConfig) -> Result<Self, LinkError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LinkError::Network {
                status: None,
                message: e.to_string(),
            })?;
        Ok(Self { config, client })
    }

    fn fetch(&self, text: &str) -> Result<String, LinkError> {
        let mut params: Vec<(&str, &str)> = vec![("lang", &self.config.lang), ("text", text)];
        params.extend(
            self.config
                .extra_params
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str())),
        );
        let mut attempt = 0;
        loop {
            let result = self
                .client
                .get(&self.config.endpoint)
                .query(&params)
                .send()
                .map_err(|e| LinkError::Network {
                    status: None,
                    message: e.to_string(),
                })
                .and_then(|resp| {
                    let status = resp.status();
                    if status.is_success() {
                        resp.text().map_err(|e| LinkError::Network {
                            status: Some(status.as_u16()),
                            message: e.to_string(),
                        })
                    } else {
                        Err(LinkError::Network {
                            status: Some(status.as_u16()),
                            message: status.to_string(),
                        })
                    }
                });
            match result {
                Err(LinkError::Network { status, .. })
                    if attempt < self.config.retries
                        && status.is_none_or(|s| s >= 500) =>
                {
                    attempt += 1;
                    log::warn!("linker request failed, retry {attempt}");
                    std::thread::sleep(Duration::from_millis(100 * attempt as u64));
                }
                other => return other,
            }
        }
    }

    pub fn link(&self, answer: &str, threshold: f64) -> Result<Vec<EntityMention>, LinkError> {
        check_threshold(threshold)?;
        if answer.trim().is_empty() {
            return Ok(Vec::new());
        }
        let body = self.fetch(answer)?;
        let candidates = parse_annotations(&body, answer)?;
        Ok(finalize(candidates, threshold))
    }
}

pub fn link_remote(
    answer: &str,
    config: &RemoteLinkerConfig,
    threshold: f64,
) -> Result<Vec<EntityMention>, LinkError> {
    RemoteLinker::new(config.clone())?.link(answer, threshold)
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n).filter(|v| !v.is_null()))
}

/// Parse a WAT-style response: either `{"annotations": [...]}` or a bare
/// array, each item carrying spot/surface, start, end, title/id and rho/score.
pub fn parse_annotations(body: &str, answer: &str) -> Result<Vec<EntityMention>, LinkError> {
    let value: Value = serde_json::from_str(body).map_err(|e| LinkError::Parse(e.to_string()))?;
    let items = match &value {
        Value::Array(a) => a,
        Value::Object(o) => match o.get("annotations") {
            Some(Value::Array(a)) => a,
            _ => return Err(LinkError::Parse("missing `annotations` array".into())),
        },
        _ => return Err(LinkError::Parse("expected object or array".into())),
    };
    let answer_len = text::char_len(answer);
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let obj = item
            .as_object()
            .ok_or_else(|| LinkError::Parse("annotation is not an object".into()))?;
        let start = field(obj, &["start"])
            .and_then(Value::as_u64)
            .ok_or_else(|| LinkError::Parse("annotation without numeric `start`".into()))?
            as usize;
        let end = field(obj, &["end"])
            .and_then(Value::as_u64)
            .ok_or_else(|| LinkError::Parse("annotation without numeric `end`".into()))?
            as usize;
        let entity_id = match field(obj, &["title", "entity", "id"]) {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(LinkError::Parse("annotation without entity title/id".into())),
        };
        let score = field(obj, &["rho", "score", "confidence"])
            .and_then(Value::as_f64)
            .ok_or_else(|| LinkError::Parse("annotation without rho/score".into()))?;
        if start >= end || end > answer_len {
            return Err(LinkError::Parse(format!(
                "span {start}..{end} outside answer of length {answer_len}"
            )));
        }
        let surface = char_slice(answer, start, end).expect("checked above").to_string();
        if let Some(spot) = field(obj, &["spot", "surface"]).and_then(Value::as_str) {
            if normalize(spot) != normalize(&surface) {
                log::debug!("spot {spot:?} differs from answer slice {surface:?}");
            }
        }
        out.push(EntityMention {
            entity_id,
            surface,
            start,
            end,
            confidence: score.clamp(0.0, 1.0),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sisyphus_dict() -> SurfaceFormDictionary {
        let mut d = SurfaceFormDictionary::new();
        d.insert("Sisyphus", "Q102561", 0.9);
        d.insert("Ephyra", "Q1368145", 0.6);
        d.insert("boulder", "Q178837", 0.3);
        d
    }

    #[test]
    fn links_two_mentions_with_offsets() {
        let answer = "Sisyphus, king of Ephyra, was punished to roll an immense boulder up a hill.";
        let ms = link(answer, &sisyphus_dict(), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!((ms[0].start, ms[0].end), (0, 8));
        assert_eq!((ms[1].start, ms[1].end), (18, 24));
        assert!(ms.iter().all(|m| m.is_valid_for(answer)));
    }

    #[test]
    fn below_threshold_dropped() {
        let ms = link("a boulder", &sisyphus_dict(), 0.45).unwrap();
        assert!(ms.is_empty());
        let ms = link("a boulder", &sisyphus_dict(), 0.3).unwrap();
        assert_eq!(ms.len(), 1);
    }

    #[test]
    fn empty_answer() {
        assert!(link("", &sisyphus_dict(), 0.45).unwrap().is_empty());
    }

    #[test]
    fn bad_threshold() {
        assert!(matches!(link("x", &sisyphus_dict(), 1.5), Err(LinkError::Threshold(_))));
    }

    #[test]
    fn longest_match_wins() {
        let mut d = SurfaceFormDictionary::new();
        d.insert("Harry Potter", "Q8337", 0.8);
        d.insert("Harry", "Q_harry", 0.5);
        d.insert("Potter", "Q_potter", 0.5);
        let ms = link("Hagrid says Harry Potter will buy", &d, 0.45).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].entity_id, "Q8337");
        assert_eq!(ms[0].surface, "Harry Potter");
    }

    #[test]
    fn punctuation_inside_surface() {
        let mut d = SurfaceFormDictionary::new();
        d.insert("James C. Kaufman", "Q6136181", 0.9);
        let ms = link("James C. Kaufman and Beghetto introduced", &d, 0.45).unwrap();
        assert_eq!(ms[0].surface, "James C. Kaufman");
        assert_eq!((ms[0].start, ms[0].end), (0, 16));
    }

    #[test]
    fn argmax_candidate() {
        let d = SurfaceFormDictionary::from_tsv("mercury\tQ308\t0.5\nmercury\tQ925\t0.4\n").unwrap();
        assert_eq!(d.best("mercury").unwrap().entity_id, "Q308");
    }

    #[test]
    fn tsv_validation() {
        assert!(SurfaceFormDictionary::from_tsv("a\tQ1\n").is_err());
        assert!(SurfaceFormDictionary::from_tsv("a\tQ1\t-0.1\n").is_err());
        assert!(SurfaceFormDictionary::from_tsv("a\tQ1\t0.7\nA\tQ2\t0.7\n").is_err());
        let d = SurfaceFormDictionary::from_tsv("# comment\n\nHarry  Potter\tQ8337\t0.8\n").unwrap();
        assert!(d.candidates("harry potter").is_some());
    }

    #[test]
    fn question_filter_by_surface() {
        let answer = "Snow is used for igloos because the air pockets trapped in it make it an insulator.";
        let mut d = SurfaceFormDictionary::new();
        d.insert("snow", "Q7561", 0.6);
        d.insert("igloos", "Q4179", 0.7);
        d.insert("insulator", "Q1194970", 0.6);
        let ms = link(answer, &d, 0.45).unwrap();
        assert_eq!(ms.len(), 3);
        let kept = filter_question_entities(ms, "Why is snow used for igloos?", &[]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].surface, "insulator");
    }

    #[test]
    fn question_filter_identity_and_off() {
        let m = EntityMention {
            entity_id: "Q1".into(),
            surface: "Rowling".into(),
            start: 0,
            end: 7,
            confidence: 0.9,
        };
        let qm = vec![EntityMention {
            entity_id: "Q1".into(),
            surface: "J.K.".into(),
            start: 0,
            end: 4,
            confidence: 0.9,
        }];
        assert!(filter_question_entities(vec![m.clone()], "who is J.K.?", &qm).is_empty());
        assert_eq!(
            filter_question_entities(vec![m.clone()], "unrelated question", &[]),
            vec![m.clone()]
        );
        assert_eq!(QuestionFilter::OFF.apply(vec![m.clone()], "who is J.K.?", &qm).len(), 1);
    }

    #[test]
    fn remote_overlap_keeps_longer() {
        let answer = "Diagon Alley is in London";
        let body = r#"{"annotations":[
            {"spot":"Diagon","start":0,"end":6,"title":"Diagon","rho":0.9},
            {"spot":"Diagon Alley","start":0,"end":12,"title":"Diagon_Alley","rho":0.6},
            {"spot":"London","start":19,"end":25,"id":17867,"rho":0.5}
        ]}"#;
        let ms = finalize(parse_annotations(body, answer).unwrap(), 0.45);
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0].entity_id, "Diagon_Alley");
        assert_eq!(ms[1].entity_id, "17867");
    }

    #[test]
    fn remote_parse_errors() {
        assert!(matches!(parse_annotations("nope", "x"), Err(LinkError::Parse(_))));
        assert!(matches!(parse_annotations("{}", "x"), Err(LinkError::Parse(_))));
        let oob = r#"[{"start":0,"end":9,"title":"T","rho":0.9}]"#;
        assert!(matches!(parse_annotations(oob, "short"), Err(LinkError::Parse(_))));
    }
}
