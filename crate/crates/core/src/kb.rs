//! Short entity definitions from a local snapshot, an append-only cache, or
//! a Wikibase-compatible API.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_MAX_DESCRIPTION_CHARS: usize = 120;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("no definition for {0}")]
    NotFound(String),
    #[error("network error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Network { status: Option<u16>, message: String },
    #[error("unexpected knowledge-base response: {0}")]
    Parse(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line_no}: {reason}")]
    Snapshot {
        path: PathBuf,
        line_no: usize,
        reason: String,
    },
    #[error("empty entity id")]
    EmptyId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DefinitionSource {
    Snapshot,
    Remote,
    Curated,
}

impl fmt::Display for DefinitionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Snapshot => "SNAPSHOT",
            Self::Remote => "REMOTE",
            Self::Curated => "CURATED",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vitality {
    Living,
    Deceased,
    Unknown,
}

/// Coarse KB type used by the rewriter and the special-case classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum KbType {
    Human(Vitality),
    GeographicLocation,
    Organization,
    Other(String),
}

impl From<String> for KbType {
    fn from(s: String) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "human" => KbType::Human(Vitality::Unknown),
            "human/living" => KbType::Human(Vitality::Living),
            "human/deceased" => KbType::Human(Vitality::Deceased),
            "geographic location" | "location" => KbType::GeographicLocation,
            "organization" | "organisation" => KbType::Organization,
            _ => KbType::Other(s.trim().to_string()),
        }
    }
}

impl From<KbType> for String {
    fn from(t: KbType) -> Self {
        match t {
            KbType::Human(Vitality::Unknown) => "human".into(),
            KbType::Human(Vitality::Living) => "human/living".into(),
            KbType::Human(Vitality::Deceased) => "human/deceased".into(),
            KbType::GeographicLocation => "geographic location".into(),
            KbType::Organization => "organization".into(),
            KbType::Other(s) => s,
        }
    }
}

/// Article placed before a description in appositive insertions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArticleStyle {
    Definite,
    Indefinite,
    None,
}

impl ArticleStyle {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "definite" | "the" => Some(ArticleStyle::Definite),
            "indefinite" | "a" | "an" => Some(ArticleStyle::Indefinite),
            "none" => Some(ArticleStyle::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Definition {
    pub entity_id: String,
    pub label: String,
    pub description: String,
    pub source: DefinitionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_type: Option<KbType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub article: Option<ArticleStyle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity: Option<f64>,
}

impl Definition {
    pub fn new(
        entity_id: impl Into<String>,
        label: impl Into<String>,
        description: impl Into<String>,
        source: DefinitionSource,
    ) -> Self {
        Self {
            entity_id: entity_id.into(),
            label: label.into(),
            description: description.into(),
            source,
            kb_type: None,
            article: None,
            popularity: None,
        }
    }

    pub fn with_kb_type(mut self, t: KbType) -> Self {
        self.kb_type = Some(t);
        self
    }

    pub fn with_article(mut self, a: ArticleStyle) -> Self {
        self.article = Some(a);
        self
    }

    pub fn is_human(&self) -> bool {
        matches!(self.kb_type, Some(KbType::Human(_)))
    }
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "st", "jr", "sr", "prof", "vs", "etc", "inc", "ltd", "co", "no",
    "mt", "ft", "gen", "col", "lt", "sgt", "e.g", "i.e", "approx", "u.s",
];

/// True if the period at byte `dot` closes an abbreviation or an initial.
fn is_abbreviation(s: &str, dot: usize) -> bool {
    let word = s[..dot]
        .rsplit(|c: char| c.is_whitespace())
        .next()
        .unwrap_or("")
        .trim_start_matches(|c: char| !c.is_alphanumeric());
    let letters = word.chars().filter(|c| c.is_alphanumeric()).count();
    letters <= 1 || word.contains('.') || ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

fn first_sentence(s: &str) -> &str {
    let iter = s.char_indices().peekable();
    for (i, c) in iter {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let rest = &s[i + c.len_utf8()..];
        let mut after = rest.chars();
        let Some(ws) = after.next() else { break };
        if !ws.is_whitespace() {
            continue;
        }
        let next = rest.trim_start().chars().next();
        if next.is_some_and(|n| n.is_uppercase() || n.is_numeric())
            && !(c == '.' && is_abbreviation(s, i))
        {
            return &s[..i + c.len_utf8()];
        }
    }
    s
}

fn strip_parentheticals(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' if depth > 0 => depth -= 1,
            ')' => {}
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn trim_tail(s: &str) -> &str {
    s.trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':'))
}

/// Cut at the last word boundary at or before `max_chars` chars.
pub fn truncate_words(s: &str, max_chars: usize) -> String {
    if s.chars().count() <= max_chars {
        return s.to_string();
    }
    let cut = crate::text::byte_offset(s, max_chars).unwrap_or(s.len());
    let head = &s[..cut];
    let next_is_space = s[cut..].chars().next().is_none_or(char::is_whitespace);
    let head = if next_is_space {
        head
    } else {
        match head.rfind(char::is_whitespace) {
            Some(p) => &head[..p],
            None => head,
        }
    };
    trim_tail(head).to_string()
}

/// Make a raw description conversational: drop parentheticals, keep the first
/// sentence, cap the length at a word boundary and drop trailing punctuation.
/// Idempotent.
pub fn cleanup_description(raw: &str, max_chars: usize) -> String {
    let no_parens = collapse_ws(&strip_parentheticals(raw));
    // spaces left before punctuation by removed parentheticals
    let no_parens = no_parens.replace(" ,", ",").replace(" .", ".");
    let sentence = first_sentence(&no_parens);
    let capped = truncate_words(sentence.trim(), max_chars);
    trim_tail(&capped).to_string()
}

/// Label and raw description as returned by a remote source.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteEntry {
    pub label: Option<String>,
    pub description: String,
}

pub trait DescriptionSource: Send + Sync {
    fn fetch(&self, entity_id: &str) -> Result<RemoteEntry, KbError>;
}

/// Bounds the number of in-flight requests.
struct RequestCap {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl RequestCap {
    fn new(max: usize) -> Self {
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            max: max.max(1),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut n = self.in_flight.lock().unwrap();
            while *n >= self.max {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
        }
        let out = f();
        *self.in_flight.lock().unwrap() -= 1;
        self.freed.notify_one();
        out
    }
}

#[derive(Debug, Clone)]
pub struct WikibaseConfig {
    /// Base URL of the action API, e.g. `https://www.wikidata.org/w/api.php`.
    pub endpoint: String,
    pub lang: String,
    pub timeout: Duration,
    pub max_concurrent: usize,
}

impl WikibaseConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            lang: "en".into(),
            timeout: Duration::from_secs(10),
            max_concurrent: 4,
        }
    }
}

/// `wbgetentities` client.
pub struct WikibaseClient {
    config: WikibaseConfig,
    client: reqwest::blocking::Client,
    cap: RequestCap,
}

impl WikibaseClient {
    pub fn new(config: WikibaseConfig) -> Result<Self, KbError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .user_agent(concat!("salient/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| KbError::Network {
                status: None,
                message: e.to_string(),
            })?;
        let cap = RequestCap::new(config.max_concurrent);
        Ok(Self { config, client, cap })
    }
}

impl DescriptionSource for WikibaseClient {
    fn fetch(&self, entity_id: &str) -> Result<RemoteEntry, KbError> {
        let body = self.cap.run(|| {
            let resp = self
                .client
                .get(&self.config.endpoint)
                .query(&[
                    ("action", "wbgetentities"),
                    ("ids", entity_id),
                    ("props", "labels|descriptions"),
                    ("languages", self.config.lang.as_str()),
                    ("format", "json"),
                ])
                .send()
                .map_err(|e| KbError::Network {
                    status: None,
                    message: e.to_string(),
                })?;
            let status = resp.status();
            if !status.is_success() {
                return Err(KbError::Network {
                    status: Some(status.as_u16()),
                    message: status.to_string(),
                });
            }
            resp.text().map_err(|e| KbError::Network {
                status: Some(status.as_u16()),
                message: e.to_string(),
            })
        })?;
        parse_wbgetentities(&body, entity_id, &self.config.lang)
    }
}

pub fn fetch_remote_description(entity_id: &str, config: &WikibaseConfig) -> Result<String, KbError> {
    Ok(WikibaseClient::new(config.clone())?.fetch(entity_id)?.description)
}

/// Extract label and description for `lang` from a `wbgetentities` body.
pub fn parse_wbgetentities(body: &str, entity_id: &str, lang: &str) -> Result<RemoteEntry, KbError> {
    let v: Value = serde_json::from_str(body).map_err(|e| KbError::Parse(e.to_string()))?;
    if let Some(err) = v.get("error") {
        let code = err.get("code").and_then(Value::as_str).unwrap_or("");
        if code == "no-such-entity" {
            return Err(KbError::NotFound(entity_id.to_string()));
        }
        return Err(KbError::Parse(err.to_string()));
    }
    let entities = v
        .get("entities")
        .and_then(Value::as_object)
        .ok_or_else(|| KbError::Parse("missing `entities`".into()))?;
    let entity = entities
        .get(entity_id)
        .or_else(|| entities.values().next())
        .ok_or_else(|| KbError::NotFound(entity_id.to_string()))?;
    if entity.get("missing").is_some() {
        return Err(KbError::NotFound(entity_id.to_string()));
    }
    let text_of = |key: &str| {
        entity
            .get(key)
            .and_then(|m| m.get(lang))
            .and_then(|d| d.get("value"))
            .and_then(Value::as_str)
            .map(str::to_string)
    };
    let description = text_of("descriptions").ok_or_else(|| KbError::NotFound(entity_id.to_string()))?;
    Ok(RemoteEntry {
        label: text_of("labels"),
        description,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KbError + '_ {
    move |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parse snapshot rows: `entity_id \t label \t description` optionally
/// followed by `popularity`, `kb_type` and `article` columns (empty allowed).
pub fn parse_snapshot(content: &str, path: &Path, source: DefinitionSource) -> Result<Vec<Definition>, KbError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| KbError::Snapshot {
            path: path.to_path_buf(),
            line_no,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if !(3..=6).contains(&cols.len()) {
            return Err(bad(format!("expected 3 to 6 columns, found {}", cols.len())));
        }
        let description = cols[2].trim();
        if cols[0].trim().is_empty() || description.is_empty() {
            return Err(bad("empty entity id or description".into()));
        }
        let mut def = Definition::new(cols[0].trim(), cols[1].trim(), description, source);
        if let Some(p) = cols.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            def.popularity = Some(p.parse().map_err(|_| bad(format!("bad popularity {p:?}")))?);
        }
        if let Some(t) = cols.get(4).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            def.kb_type = Some(KbType::from(t.to_string()));
        }
        if let Some(a) = cols.get(5).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            def.article = Some(ArticleStyle::parse(a).ok_or_else(|| bad(format!("bad article {a:?}")))?);
        }
        out.push(def);
    }
    Ok(out)
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Snapshot, cache and optional remote source behind one lookup.
pub struct KnowledgeBase {
    snapshot: HashMap<String, Definition>,
    cache: RwLock<HashMap<String, Definition>>,
    cache_file: Mutex<Option<(PathBuf, File)>>,
    remote: Option<Box<dyn DescriptionSource>>,
    max_chars: usize,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        Self {
            snapshot: HashMap::new(),
            cache: RwLock::new(HashMap::new()),
            cache_file: Mutex::new(None),
            remote: None,
            max_chars: DEFAULT_MAX_DESCRIPTION_CHARS,
        }
    }
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_definitions(defs: impl IntoIterator<Item = Definition>) -> Self {
        let mut kb = Self::new();
        for d in defs {
            kb.snapshot.insert(d.entity_id.clone(), d);
        }
        kb
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, KbError> {
        let content = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(Self::from_definitions(parse_snapshot(&content, path, DefinitionSource::Snapshot)?))
    }

    /// Load (or create) an append-only cache file; new remote results are
    /// appended to it.
    pub fn with_cache_file(self, path: &Path) -> Result<Self, KbError> {
        if path.exists() {
            let content = std::fs::read_to_string(path).map_err(io_err(path))?;
            let mut cache = self.cache.write();
            for d in parse_snapshot(&content, path, DefinitionSource::Remote)? {
                cache.insert(d.entity_id.clone(), d);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        *self.cache_file.lock().unwrap() = Some((path.to_path_buf(), file));
        Ok(self)
    }

    pub fn with_remote(mut self, remote: Box<dyn DescriptionSource>) -> Self {
        self.remote = Some(remote);
        self
    }

    pub fn with_max_chars(mut self, max_chars: usize) -> Self {
        self.max_chars = max_chars;
        self
    }

    pub fn insert_curated(&mut self, mut def: Definition) {
        def.source = DefinitionSource::Curated;
        self.snapshot.insert(def.entity_id.clone(), def);
    }

    pub fn snapshot_len(&self) -> usize {
        self.snapshot.len()
    }

    /// Snapshot first, then cache, then the remote source (if any).
    pub fn get_definition(&self, entity_id: &str) -> Result<Definition, KbError> {
        if entity_id.trim().is_empty() {
            return Err(KbError::EmptyId);
        }
        if let Some(d) = self.snapshot.get(entity_id) {
            return Ok(d.clone());
        }
        if let Some(d) = self.cache.read().get(entity_id) {
            return Ok(d.clone());
        }
        let Some(remote) = &self.remote else {
            return Err(KbError::NotFound(entity_id.to_string()));
        };
        let entry = remote.fetch(entity_id)?;
        let description = cleanup_description(&entry.description, self.max_chars);
        if description.is_empty() {
            return Err(KbError::NotFound(entity_id.to_string()));
        }
        let def = Definition::new(
            entity_id,
            entry.label.unwrap_or_else(|| entity_id.to_string()),
            description,
            DefinitionSource::Remote,
        );
        let mut cache = self.cache.write();
        if let Some(existing) = cache.get(entity_id) {
            return Ok(existing.clone());
        }
        if let Some((path, file)) = self.cache_file.lock().unwrap().as_mut() {
            writeln!(
                file,
                "{}\t{}\t{}",
                tsv_field(&def.entity_id),
                tsv_field(&def.label),
                tsv_field(&def.description)
            )
            .map_err(io_err(path))?;
        }
        cache.insert(entity_id.to_string(), def.clone());
        Ok(def)
    }

    /// Popularity at or above which an entity counts as common knowledge:
    /// the smallest popularity among the top `top_fraction` of snapshot
    /// entries that carry one.
    pub fn popularity_threshold(&self, top_fraction: f64) -> Option<f64> {
        let mut pops: Vec<f64> = self.snapshot.values().filter_map(|d| d.popularity).collect();
        if pops.is_empty() {
            return None;
        }
        pops.sort_by(|a, b| b.total_cmp(a));
        let k = ((pops.len() as f64) * top_fraction.clamp(0.0, 1.0)).ceil().max(1.0) as usize;
        Some(pops[k.min(pops.len()) - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Counting {
        calls: Arc<AtomicUsize>,
        reply: Result<RemoteEntry, u16>,
    }

    impl DescriptionSource for Counting {
        fn fetch(&self, _id: &str) -> Result<RemoteEntry, KbError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.reply.clone().map_err(|s| KbError::Network {
                status: Some(s),
                message: "unavailable".into(),
            })
        }
    }

    #[test]
    fn cleanup_first_sentence() {
        let raw = "A Carthaginian general during the Second Punic War with the Roman Republic. He later fled.";
        assert_eq!(
            cleanup_description(raw, 120),
            "A Carthaginian general during the Second Punic War with the Roman Republic"
        );
    }

    #[test]
    fn cleanup_keeps_initials() {
        assert_eq!(
            cleanup_description("fantasy literature series by J.K. Rowling", 120),
            "fantasy literature series by J.K. Rowling"
        );
        assert_eq!(
            cleanup_description("Work by Dr. Smith. Second.", 120),
            "Work by Dr. Smith"
        );
    }

    #[test]
    fn cleanup_strips_parentheticals() {
        assert_eq!(
            cleanup_description("Greek king (myth (nested)), punished forever.", 120),
            "Greek king, punished forever"
        );
    }

    #[test]
    fn cleanup_truncates_at_word_boundary() {
        let long = "word ".repeat(40);
        let out = cleanup_description(&long, 22);
        assert_eq!(out, "word word word word");
        assert!(out.chars().count() <= 22);
    }

    #[test]
    fn snapshot_verbatim() {
        let tsv = "Q1\tRubeus Hagrid\tfictional character from Harry Potter\n";
        let kb = KnowledgeBase::from_definitions(
            parse_snapshot(tsv, Path::new("x"), DefinitionSource::Snapshot).unwrap(),
        );
        let d = kb.get_definition("Q1").unwrap();
        assert_eq!(d.description, "fictional character from Harry Potter");
        assert_eq!(d.source, DefinitionSource::Snapshot);
    }

    #[test]
    fn snapshot_optional_columns() {
        let tsv = "Q1\tSisyphus\tking of Ephyra in Greek mythology\t\thuman/deceased\tdefinite\nQ2\tJohannesburg\tcity in South Africa\t0.9\tgeographic location\n";
        let defs = parse_snapshot(tsv, Path::new("x"), DefinitionSource::Snapshot).unwrap();
        assert_eq!(defs[0].kb_type, Some(KbType::Human(Vitality::Deceased)));
        assert_eq!(defs[0].article, Some(ArticleStyle::Definite));
        assert_eq!(defs[0].popularity, None);
        assert_eq!(defs[1].popularity, Some(0.9));
        assert_eq!(defs[1].kb_type, Some(KbType::GeographicLocation));
        assert!(parse_snapshot("Q1\tx\t\n", Path::new("x"), DefinitionSource::Snapshot).is_err());
    }

    #[test]
    fn missing_without_remote() {
        assert!(matches!(
            KnowledgeBase::new().get_definition("Q404"),
            Err(KbError::NotFound(_))
        ));
    }

    #[test]
    fn remote_result_cached() {
        let calls = Arc::new(AtomicUsize::new(0));
        let kb = KnowledgeBase::new().with_remote(Box::new(Counting {
            calls: calls.clone(),
            reply: Ok(RemoteEntry {
                label: Some("Hannibal".into()),
                description: "A Carthaginian general. He later fled.".into(),
            }),
        }));
        let a = kb.get_definition("Q8456").unwrap();
        let b = kb.get_definition("Q8456").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.description, "A Carthaginian general");
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn network_error_surfaces() {
        let kb = KnowledgeBase::new().with_remote(Box::new(Counting {
            calls: Arc::new(AtomicUsize::new(0)),
            reply: Err(503),
        }));
        assert!(matches!(
            kb.get_definition("Q1"),
            Err(KbError::Network { status: Some(503), .. })
        ));
    }

    #[test]
    fn cache_file_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        let remote = || {
            Box::new(Counting {
                calls: Arc::new(AtomicUsize::new(0)),
                reply: Ok(RemoteEntry {
                    label: None,
                    description: "continent".into(),
                }),
            })
        };
        let kb = KnowledgeBase::new().with_cache_file(&path).unwrap().with_remote(remote());
        kb.get_definition("Q15").unwrap();
        drop(kb);
        let reopened = KnowledgeBase::new().with_cache_file(&path).unwrap();
        let d = reopened.get_definition("Q15").unwrap();
        assert_eq!(d.description, "continent");
        assert_eq!(d.source, DefinitionSource::Remote);
    }

    #[test]
    fn wbgetentities_parsing() {
        let body = r#"{"entities":{"Q8456":{"id":"Q8456","labels":{"en":{"language":"en","value":"Hannibal"}},"descriptions":{"en":{"language":"en","value":"Carthaginian general"}}}},"success":1}"#;
        let e = parse_wbgetentities(body, "Q8456", "en").unwrap();
        assert_eq!(e.description, "Carthaginian general");
        assert_eq!(e.label.as_deref(), Some("Hannibal"));
        assert!(matches!(parse_wbgetentities(body, "Q8456", "de"), Err(KbError::NotFound(_))));
        let missing = r#"{"entities":{"Q0":{"id":"Q0","missing":""}}}"#;
        assert!(matches!(parse_wbgetentities(missing, "Q0", "en"), Err(KbError::NotFound(_))));
        assert!(matches!(parse_wbgetentities("<html>", "Q0", "en"), Err(KbError::Parse(_))));
    }

    #[test]
    fn popularity_percentile() {
        let defs = (1..=200).map(|i| {
            let mut d = Definition::new(format!("Q{i}"), "l", "d", DefinitionSource::Snapshot);
            d.popularity = Some(i as f64);
            d
        });
        let kb = KnowledgeBase::from_definitions(defs);
        assert_eq!(kb.popularity_threshold(0.01), Some(199.0));
        assert_eq!(KnowledgeBase::new().popularity_threshold(0.01), None);
    }
}
