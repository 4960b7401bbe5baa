use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use salient_core::analytics::{
    aggregate_preferences, chi_square_uniform, dataset_stats, fleiss_kappa, mean_pairwise_spearman, ChiSquareResult,
    CountMatrix, GroupBy, PreferenceTable,
};
use salient_core::corpus::{self, Conversation, TurnKey};
use salient_core::kb::KbError;
use salient_core::linker::EntityMention;
use salient_core::pipeline::{AnswerSource, ChatSession, TurnRewrite};
use salient_core::rewriter::Strategy;
use salient_core::salience;

use crate::config::{self, require_file, usage, FileConfig};
use crate::{AnalyzeArgs, AnalyzeWhat, ChatArgs, IngestArgs, InputFormat, KbFetchArgs, LinkArgs, PreferenceGrouping, RecordKind, RewriteCmdArgs};

/// One line of `link` output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MentionRecord {
    pub conversation_id: String,
    pub turn_index: u32,
    pub question: String,
    pub answer: String,
    pub mentions: Vec<EntityMention>,
}

/// One line of `rewrite` output.
#[derive(Debug, Clone, Serialize)]
pub struct RewriteRecord {
    pub conversation_id: String,
    pub turn_index: u32,
    #[serde(flatten)]
    pub rewrite: TurnRewrite,
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit<T: Serialize>(path: Option<&Path>, records: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    corpus::write_jsonl(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<Conversation>> {
    require_file(path, "corpus")?;
    Ok(corpus::load_corpus(path)?)
}

/// Every (conversation, turn position) pair in input order.
fn turn_jobs(convs: &[Conversation]) -> Vec<(usize, usize)> {
    convs
        .iter()
        .enumerate()
        .flat_map(|(c, conv)| (0..conv.turns.len()).map(move |t| (c, t)))
        .collect()
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    require_file(&args.input, "input")?;
    let content = std::fs::read_to_string(&args.input).with_context(|| format!("cannot read {}", args.input.display()))?;
    let out = args.output.as_deref();
    let n = match (args.format, args.kind) {
        (InputFormat::Qrecc, RecordKind::Corpus) => {
            let convs = corpus::parse_qrecc(&content)?;
            emit(out, &convs)?;
            convs.len()
        }
        (InputFormat::Qrecc, _) => return Err(usage("qrecc input holds conversations only; use --kind corpus")),
        (InputFormat::Jsonl, RecordKind::Corpus) => {
            let convs = corpus::parse_corpus(&content)?;
            emit(out, &convs)?;
            convs.len()
        }
        (InputFormat::Jsonl, RecordKind::Salience) => {
            let recs = corpus::parse_salience_annotations(&content)?;
            emit(out, &recs)?;
            recs.len()
        }
        (InputFormat::Jsonl, RecordKind::Preferences) => {
            let recs = corpus::parse_preferences(&content)?;
            emit(out, &recs)?;
            recs.len()
        }
    };
    log::info!("{n} records validated");
    Ok(())
}

pub fn link(args: LinkArgs, file: &FileConfig) -> Result<()> {
    let convs = load_corpus(&args.corpus)?;
    let pipeline = config::build_pipeline(&args.source, None, file)?;
    let records = turn_jobs(&convs)
        .par_iter()
        .map(|&(c, t)| {
            let conv = &convs[c];
            let turn = &conv.turns[t];
            Ok(MentionRecord {
                conversation_id: conv.conversation_id.clone(),
                turn_index: turn.turn_index,
                question: turn.question.clone(),
                answer: turn.answer.clone(),
                mentions: pipeline.link_turn(&turn.question, &turn.answer)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(args.output.as_deref(), &records)
}

fn load_mentions(path: &Path) -> Result<HashMap<TurnKey, Vec<EntityMention>>> {
    require_file(path, "mentions file")?;
    let content = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: MentionRecord =
            serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        for m in &r.mentions {
            if !m.is_valid_for(&r.answer) {
                anyhow::bail!("{} line {}: mention {} does not match the answer", path.display(), i + 1, m.entity_id);
            }
        }
        out.insert(TurnKey::new(r.conversation_id, r.turn_index), r.mentions);
    }
    Ok(out)
}

/// Mean crowd label per entity, per turn.
fn load_gold(path: &Path) -> Result<HashMap<TurnKey, HashMap<String, f64>>> {
    require_file(path, "salience file")?;
    let anns = corpus::load_salience_annotations(path)?;
    let mut out: HashMap<TurnKey, HashMap<String, f64>> = HashMap::new();
    for a in &anns {
        let (score, _) = salience::aggregate(&a.labels)?;
        out.entry(a.turn_key()).or_default().insert(a.entity_id.clone(), score);
    }
    Ok(out)
}

pub fn rewrite(args: RewriteCmdArgs, file: &FileConfig) -> Result<()> {
    let strategies = config::resolve_strategies(&args.strategy, file, &Strategy::ALL)?;
    let convs = load_corpus(&args.corpus)?;
    let pipeline = config::build_pipeline(&args.source, Some(&args.rewrite), file)?;
    let mentions = args.mentions.as_deref().map(load_mentions).transpose()?;
    let gold = args.salience.as_deref().map(load_gold).transpose()?;
    let per_turn = turn_jobs(&convs)
        .par_iter()
        .map(|&(c, t)| {
            let conv = &convs[c];
            let turn = &conv.turns[t];
            let key = TurnKey::new(conv.conversation_id.clone(), turn.turn_index);
            let linked;
            let ms: &[EntityMention] = match mentions.as_ref() {
                Some(m) => m.get(&key).map(Vec::as_slice).unwrap_or(&[]),
                None => {
                    linked = pipeline.link_turn(&turn.question, &turn.answer)?;
                    &linked
                }
            };
            let history = &conv.turns[..t];
            let scored = pipeline.score_turn(&turn.question, &turn.answer, ms, history, gold.as_ref().and_then(|g| g.get(&key)))?;
            strategies
                .iter()
                .map(|&s| {
                    let rewrite = pipeline.rewrite_scored(&turn.answer, &scored, s)?;
                    for id in &rewrite.missing_definitions {
                        log::warn!("{key}: no definition for {id}");
                    }
                    Ok(RewriteRecord {
                        conversation_id: conv.conversation_id.clone(),
                        turn_index: turn.turn_index,
                        rewrite,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<RewriteRecord> = per_turn.into_iter().flatten().collect();
    emit(args.output.as_deref(), &records)
}

fn sig_marker(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn format_p(p: f64) -> String {
    if p < 0.0001 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn preference_table(t: &PreferenceTable) -> String {
    let mut s = format!(
        "{:<18} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
        match t.group_by {
            GroupBy::Subtype => "inline/follow-up",
            GroupBy::TopN => "entities",
        },
        "original",
        "inline",
        "followup",
        "chi2",
        "p"
    );
    for r in t.rows.iter().chain(std::iter::once(&t.total)) {
        s.push_str(&format!(
            "{:<18} {:>8} {:>8} {:>8} {:>8.3} {:>10}{}\n",
            r.condition,
            r.original,
            r.inline,
            r.followup,
            r.test.chi2,
            format_p(r.test.p),
            sig_marker(r.test.p)
        ));
    }
    s
}

fn chisq_table(counts: &[u64], r: &ChiSquareResult) -> String {
    let counts: Vec<String> = counts.iter().map(u64::to_string).collect();
    format!(
        "counts  {}\nchi2    {:.4}\ndf      {}\np       {}{}\n",
        counts.join(", "),
        r.chi2,
        r.df,
        format_p(r.p),
        sig_marker(r.p)
    )
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let (table, report) = match &args.what {
        AnalyzeWhat::Kappa { annotations } => {
            require_file(annotations, "annotations")?;
            let anns = corpus::load_salience_annotations(annotations)?;
            let m = CountMatrix::from_annotations(&anns)?;
            let kappa = fleiss_kappa(&m)?;
            (
                format!("items   {}\nraters  {}\nkappa   {kappa:.4}\n", m.rows().len(), m.raters()),
                serde_json::json!({"items": m.rows().len(), "raters": m.raters(), "kappa": kappa}),
            )
        }
        AnalyzeWhat::Rho { annotations } => {
            require_file(annotations, "annotations")?;
            let anns = corpus::load_salience_annotations(annotations)?;
            let rho = mean_pairwise_spearman(&anns)?;
            (
                format!("mean pairwise spearman  {rho}  (n = {} answers)\n", rho.n),
                serde_json::to_value(rho)?,
            )
        }
        AnalyzeWhat::Chisq { counts } => {
            if counts.len() < 2 {
                return Err(usage("chisq needs at least two counts"));
            }
            let r = chi_square_uniform(counts)?;
            (
                chisq_table(counts, &r),
                serde_json::json!({"counts": counts, "chi2": r.chi2, "df": r.df, "p": r.p}),
            )
        }
        AnalyzeWhat::Stats { annotations } => {
            require_file(annotations, "annotations")?;
            let anns = corpus::load_salience_annotations(annotations)?;
            let s = dataset_stats(&anns)?;
            let kappa = CountMatrix::from_annotations(&anns).and_then(|m| fleiss_kappa(&m)).ok();
            let drift = s.turn_drift.map_or_else(|| "n/a".to_string(), |d| d.to_string());
            let table = format!(
                "answers              {}\nentities             {}\nentities per answer  {}\nsalience score       {}\nlabel shares 0/1/2   {:.1}% / {:.1}% / {:.1}%\nsalient ratio        {}\nturn drift           {drift}\nkappa                {}\n",
                s.answers,
                s.entities,
                s.entities_per_answer,
                s.entity_score,
                100.0 * s.label_share[0],
                100.0 * s.label_share[1],
                100.0 * s.label_share[2],
                s.salient_ratio,
                kappa.map_or_else(|| "n/a".to_string(), |k| format!("{k:.4}")),
            );
            let mut report = serde_json::to_value(&s)?;
            report["kappa"] = serde_json::json!(kappa);
            (table, report)
        }
        AnalyzeWhat::Preferences { input, by } => {
            require_file(input, "preferences file")?;
            let recs = corpus::load_preferences(input)?;
            let groupings: &[GroupBy] = match by {
                PreferenceGrouping::Subtype => &[GroupBy::Subtype],
                PreferenceGrouping::TopN => &[GroupBy::TopN],
                PreferenceGrouping::Both => &[GroupBy::Subtype, GroupBy::TopN],
            };
            let tables: Vec<PreferenceTable> = groupings.iter().map(|&g| aggregate_preferences(&recs, g)).collect();
            let text = tables.iter().map(preference_table).collect::<Vec<_>>().join("\n");
            (text, serde_json::to_value(&tables)?)
        }
    };
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    let mut out = io::stdout().lock();
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write!(out, "{table}")?;
    }
    Ok(())
}

pub fn chat(args: ChatArgs, file: &FileConfig) -> Result<()> {
    let strategies = config::resolve_strategies(&args.strategy, file, &[Strategy::FollowupOffer])?;
    let [strategy] = strategies[..] else {
        return Err(usage("chat takes a single strategy"));
    };
    let answers = match &args.corpus {
        Some(p) if !args.echo => AnswerSource::from_corpus(&load_corpus(p)?),
        _ => AnswerSource::Echo,
    };
    let pipeline = config::build_pipeline(&args.source, Some(&args.rewrite), file)?;
    let mut session = ChatSession::new(&pipeline, strategy, answers);
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let reply = session.handle(line)?;
        writeln!(out, "{}", reply.text())?;
        out.flush()?;
    }
    Ok(())
}

pub fn kb_fetch(args: KbFetchArgs, file: &FileConfig) -> Result<()> {
    let mut ids: BTreeSet<String> = args.ids.iter().cloned().collect();
    if let Some(p) = &args.from_mentions {
        for ms in load_mentions(p)?.into_values() {
            ids.extend(ms.into_iter().map(|m| m.entity_id));
        }
    }
    if ids.is_empty() {
        return Err(usage("no entity ids given"));
    }
    let kb = config::build_kb(&args.source, file, salient_core::kb::DEFAULT_MAX_DESCRIPTION_CHARS)?;
    let ids: Vec<String> = ids.into_iter().collect();
    let results: Vec<_> = ids.par_iter().map(|id| kb.get_definition(id)).collect();
    let mut out = io::stdout().lock();
    let mut missing = 0;
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(d) => writeln!(out, "{}\t{}\t{}\t{}", d.entity_id, d.label, d.description, d.source)?,
            Err(KbError::NotFound(_)) => {
                missing += 1;
                eprintln!("not found: {id}");
            }
            Err(e) => return Err(e.into()),
        }
    }
    if missing > 0 {
        log::warn!("{missing} of {} ids without a definition", ids.len());
    }
    Ok(())
}
