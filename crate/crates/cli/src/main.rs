mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{RewriteArgs, SourceArgs, UsageError};

/// Link, score and rewrite conversational answers so they stand on their own.
#[derive(Debug, Parser)]
#[command(name = "salient", version)]
struct Cli {
    /// TOML config file; flags and SALIENT_* variables take precedence.
    #[arg(long, global = true, env = "SALIENT_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a JSONL file or convert a QReCC export into corpus JSONL.
    Ingest(IngestArgs),
    /// Link answer entities for every turn of a corpus.
    Link(LinkArgs),
    /// Rewrite every answer of a corpus with one or more strategies.
    Rewrite(RewriteCmdArgs),
    /// Agreement, correlation and significance statistics.
    Analyze(AnalyzeArgs),
    /// Interactive session; reads user lines from stdin.
    Chat(ChatArgs),
    /// Knowledge-base utilities.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Jsonl,
    Qrecc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecordKind {
    Corpus,
    Salience,
    Preferences,
}

#[derive(Debug, clap::Args)]
pub struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Jsonl)]
    format: InputFormat,
    /// Record type of a JSONL input.
    #[arg(long, value_enum, default_value_t = RecordKind::Corpus)]
    kind: RecordKind,
    /// Write canonical JSONL here (stdout when omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct LinkArgs {
    #[arg(long, env = "SALIENT_CORPUS")]
    corpus: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, clap::Args)]
pub struct RewriteCmdArgs {
    #[arg(long, env = "SALIENT_CORPUS")]
    corpus: PathBuf,
    /// Mentions produced by `link`; the corpus is linked on the fly otherwise.
    #[arg(long)]
    mentions: Option<PathBuf>,
    /// Crowd salience labels; predicted scores fill any gaps.
    #[arg(long)]
    salience: Option<PathBuf>,
    /// Comma-separated or repeated; defaults to all four.
    #[arg(long, env = "SALIENT_STRATEGY")]
    strategy: Vec<String>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    rewrite: RewriteArgs,
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    /// Print the JSON report instead of the table.
    #[arg(long, global = true)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    what: AnalyzeWhat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PreferenceGrouping {
    Subtype,
    TopN,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeWhat {
    /// Fleiss' kappa over salience labels.
    Kappa {
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Mean pairwise Spearman rho between workers.
    Rho {
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Chi-square test of counts against a uniform distribution.
    Chisq {
        #[arg(required = true, num_args = 1.., value_delimiter = ',')]
        counts: Vec<u64>,
    },
    /// Dataset summary of salience labels.
    Stats {
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Preference counts with a chi-square test per row.
    Preferences {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = PreferenceGrouping::Both)]
        by: PreferenceGrouping,
    },
}

#[derive(Debug, clap::Args)]
pub struct ChatArgs {
    /// Answer store: questions in this corpus get its answers.
    #[arg(long, env = "SALIENT_CORPUS")]
    corpus: Option<PathBuf>,
    /// Use each user line as its own answer.
    #[arg(long, conflicts_with = "corpus")]
    echo: bool,
    #[arg(long, env = "SALIENT_STRATEGY")]
    strategy: Vec<String>,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    rewrite: RewriteArgs,
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Resolve definitions through snapshot, cache and remote API.
    Fetch(KbFetchArgs),
}

#[derive(Debug, clap::Args)]
pub struct KbFetchArgs {
    /// Entity ids.
    ids: Vec<String>,
    /// Also fetch every entity in a mentions file from `link`.
    #[arg(long)]
    from_mentions: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SALIENT_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = config::FileConfig::load(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Link(a) => commands::link(a, &file),
        Command::Rewrite(a) => commands::rewrite(a, &file),
        Command::Analyze(a) => commands::analyze(a),
        Command::Chat(a) => commands::chat(a, &file),
        Command::Kb {
            command: KbCommand::Fetch(a),
        } => commands::kb_fetch(a, &file),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
