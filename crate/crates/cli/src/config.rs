//! Run configuration. Each setting resolves as command-line flag, then
//! `SALIENT_*` environment variable (both via clap), then the TOML config
//! file, then the built-in default.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use salient_core::kb::{KnowledgeBase, WikibaseClient, WikibaseConfig};
use salient_core::linker::{QuestionFilter, RemoteLinker, RemoteLinkerConfig, SurfaceFormDictionary, DEFAULT_THRESHOLD};
use salient_core::pipeline::{LinkerBackend, Pipeline, PipelineOptions};
use salient_core::rewriter::{FollowupTemplates, RewriteConfig, Strategy};

/// Invalid invocation; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkerMode {
    Local,
    Remote,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threshold: Option<f64>,
    pub top_n: Option<usize>,
    pub max_top_n: Option<usize>,
    pub strategy: Option<Vec<String>>,
    pub template_preset: Option<String>,
    pub serial_comma: Option<bool>,
    pub question_filter: Option<bool>,
    pub linker: Option<LinkerMode>,
    pub endpoint: Option<String>,
    pub kb_endpoint: Option<String>,
    pub dictionary: Option<PathBuf>,
    pub kb_snapshot: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub followup: FollowupSection,
    #[serde(default)]
    pub inline: InlineSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowupSection {
    pub question_template: Option<String>,
    pub offer_template: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSection {
    pub max_definition_chars: Option<usize>,
    pub historical_figures: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("invalid config file {}: {e}", path.display())))
    }
}

/// Linker and knowledge-base settings shared by several subcommands.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Entity linker backend.
    #[arg(long, env = "SALIENT_LINKER", value_enum)]
    pub linker: Option<LinkerMode>,
    /// Surface-form dictionary (TSV: surface, entity id, commonness).
    #[arg(long, env = "SALIENT_DICTIONARY")]
    pub dictionary: Option<PathBuf>,
    /// Remote linker endpoint.
    #[arg(long, env = "SALIENT_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Wikibase API used for definitions missing from the snapshot.
    #[arg(long, env = "SALIENT_KB_ENDPOINT")]
    pub kb_endpoint: Option<String>,
    /// Definition snapshot (TSV).
    #[arg(long, env = "SALIENT_KB_SNAPSHOT")]
    pub kb_snapshot: Option<PathBuf>,
    /// Append-only cache of remotely fetched definitions.
    #[arg(long, env = "SALIENT_CACHE")]
    pub cache: Option<PathBuf>,
    /// Minimum linker confidence.
    #[arg(long, env = "SALIENT_THRESHOLD")]
    pub threshold: Option<f64>,
    /// Keep answer entities that the question already mentions.
    #[arg(long, env = "SALIENT_NO_QUESTION_FILTER")]
    pub no_question_filter: bool,
    /// Network timeout in seconds for remote services.
    #[arg(long, env = "SALIENT_TIMEOUT", default_value_t = 10)]
    pub timeout: u64,
}

/// Rewriting settings.
#[derive(Debug, Clone, Args)]
pub struct RewriteArgs {
    /// Number of entities to rewrite per answer.
    #[arg(long, env = "SALIENT_TOP_N")]
    pub top_n: Option<usize>,
    /// Upper bound accepted for --top-n.
    #[arg(long, env = "SALIENT_MAX_TOP_N")]
    pub max_top_n: Option<usize>,
    /// Follow-up template preset: appendix or main-text.
    #[arg(long, env = "SALIENT_TEMPLATE_PRESET")]
    pub template_preset: Option<String>,
    /// Use "X, Y, or Z" (true) or "X, Y or Z" (false).
    #[arg(long, env = "SALIENT_SERIAL_COMMA", num_args = 0..=1, default_missing_value = "true")]
    pub serial_comma: Option<bool>,
    /// Introduce humans of unknown vitality with "who was".
    #[arg(long, env = "SALIENT_HISTORICAL_FIGURES", num_args = 0..=1, default_missing_value = "true")]
    pub historical_figures: Option<bool>,
}

pub fn parse_strategies(raw: &[String]) -> Result<Vec<Strategy>> {
    let mut out = Vec::new();
    for s in raw {
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let st: Strategy = part.parse().map_err(|_| {
                usage(format!(
                    "unknown strategy {part:?} (expected inline-wiki, inline-natural, followup-question or followup-offer)"
                ))
            })?;
            if !out.contains(&st) {
                out.push(st);
            }
        }
    }
    Ok(out)
}

/// Strategies from flag/env, else config file, else `fallback`.
pub fn resolve_strategies(flag: &[String], file: &FileConfig, fallback: &[Strategy]) -> Result<Vec<Strategy>> {
    let raw: Vec<String> = if !flag.is_empty() {
        flag.to_vec()
    } else if let Some(s) = &file.strategy {
        s.clone()
    } else {
        return Ok(fallback.to_vec());
    };
    let out = parse_strategies(&raw)?;
    if out.is_empty() {
        return Err(usage("no strategy given"));
    }
    Ok(out)
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

pub fn resolve_options(src: &SourceArgs, rw: Option<&RewriteArgs>, file: &FileConfig) -> Result<PipelineOptions> {
    let threshold = src.threshold.or(file.threshold).unwrap_or(DEFAULT_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage(format!("threshold {threshold} outside [0, 1]")));
    }
    let question_filter = if src.no_question_filter || file.question_filter == Some(false) {
        QuestionFilter::OFF
    } else {
        QuestionFilter::default()
    };
    let mut options = PipelineOptions {
        threshold,
        question_filter,
        ..PipelineOptions::default()
    };
    let none = RewriteArgs {
        top_n: None,
        max_top_n: None,
        template_preset: None,
        serial_comma: None,
        historical_figures: None,
    };
    let rw = rw.unwrap_or(&none);

    let max_top_n = rw.max_top_n.or(file.max_top_n).unwrap_or(3);
    let top_n = rw.top_n.or(file.top_n).unwrap_or(max_top_n.min(3));
    if top_n == 0 || top_n > max_top_n {
        return Err(usage(format!("top-n must be between 1 and {max_top_n}, got {top_n}")));
    }
    options.top_n = top_n;

    let preset = rw
        .template_preset
        .clone()
        .or_else(|| file.template_preset.clone())
        .unwrap_or_else(|| "appendix".into());
    let mut templates = FollowupTemplates::preset(&preset)
        .ok_or_else(|| usage(format!("unknown template preset {preset:?} (expected appendix or main-text)")))?;
    // explicit templates in the config file refine the preset
    if let Some(q) = &file.followup.question_template {
        templates.question = q.clone();
    }
    if let Some(o) = &file.followup.offer_template {
        templates.offer = o.clone();
    }
    for t in [&templates.question, &templates.offer] {
        if !t.contains("{list}") {
            return Err(usage(format!("template {t:?} lacks a {{list}} placeholder")));
        }
    }
    let defaults = RewriteConfig::default();
    options.rewrite = RewriteConfig {
        templates,
        serial_comma: rw.serial_comma.or(file.serial_comma).unwrap_or(defaults.serial_comma),
        max_definition_chars: file.inline.max_definition_chars.unwrap_or(defaults.max_definition_chars),
        historical_figures: rw
            .historical_figures
            .or(file.inline.historical_figures)
            .unwrap_or(defaults.historical_figures),
    };
    Ok(options)
}

pub fn build_linker(src: &SourceArgs, file: &FileConfig) -> Result<LinkerBackend> {
    let mode = src.linker.or(file.linker).unwrap_or(LinkerMode::Local);
    match mode {
        LinkerMode::Local => {
            let path = src
                .dictionary
                .clone()
                .or_else(|| file.dictionary.clone())
                .ok_or_else(|| usage("local linking needs --dictionary"))?;
            require_file(&path, "dictionary")?;
            Ok(LinkerBackend::Local(SurfaceFormDictionary::load(&path)?))
        }
        LinkerMode::Remote => {
            let endpoint = src
                .endpoint
                .clone()
                .or_else(|| file.endpoint.clone())
                .ok_or_else(|| usage("remote linking needs --endpoint"))?;
            let mut cfg = RemoteLinkerConfig::new(endpoint);
            cfg.timeout = Duration::from_secs(src.timeout);
            Ok(LinkerBackend::Remote(RemoteLinker::new(cfg)?))
        }
    }
}

pub fn build_kb(src: &SourceArgs, file: &FileConfig, max_chars: usize) -> Result<KnowledgeBase> {
    let mut kb = match src.kb_snapshot.clone().or_else(|| file.kb_snapshot.clone()) {
        Some(path) => {
            require_file(&path, "knowledge-base snapshot")?;
            KnowledgeBase::load_snapshot(&path)?
        }
        None => KnowledgeBase::new(),
    };
    if let Some(cache) = src.cache.clone().or_else(|| file.cache.clone()) {
        kb = kb
            .with_cache_file(&cache)
            .with_context(|| format!("opening cache {}", cache.display()))?;
    }
    if let Some(endpoint) = src.kb_endpoint.clone().or_else(|| file.kb_endpoint.clone()) {
        let mut cfg = WikibaseConfig::new(endpoint);
        cfg.timeout = Duration::from_secs(src.timeout);
        kb = kb.with_remote(Box::new(WikibaseClient::new(cfg)?));
    }
    Ok(kb.with_max_chars(max_chars))
}

pub fn build_pipeline(src: &SourceArgs, rw: Option<&RewriteArgs>, file: &FileConfig) -> Result<Pipeline> {
    let options = resolve_options(src, rw, file)?;
    let linker = build_linker(src, file)?;
    let kb = build_kb(src, file, options.rewrite.max_definition_chars)?;
    Ok(Pipeline::new(linker, kb, options))
}
