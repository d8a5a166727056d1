//! Command-line front end: `extract`, `evaluate`, `compare` and
//! `cache prune|stats`.
//!
//! Exit codes: 0 clean, 2 finished with degraded records, 1 fatal.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Deserializer};
use thiserror::Error;

use crate::corpus::{
    load_corpus, select_exemplars, Corpus, CorpusError, CorpusFormat, PolicyRecord,
};
use crate::evaluation::{build_report_with, render_report, EvalError, EvalReport, ReportFormat};
use crate::extraction::{
    manifest_path, read_journal, Extractor, JournalError, JournalWriter, RunManifest,
};
use crate::gateway::{
    unix_now, BackendConfig, BackendKind, Gateway, GatewayError, HttpConfig, MockScript,
    ResponseCache, DEFAULT_IN_FLIGHT, DEFAULT_MAX_TOKENS,
};
use crate::par::Execution;
use crate::prompting::{MethodId, PromptError, TemplateSet};
use crate::taxonomy::{Taxonomy, TaxonomyError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_DEGRADED: i32 = 2;

pub const DEFAULT_MODEL: &str = "meta-llama/Llama-3.3-70B-Instruct-Turbo";
pub const DEFAULT_BASE_URL: &str = "https://api.together.xyz/v1";

#[derive(Debug, Parser)]
#[command(
    name = "policyx",
    version,
    about = "Extract and evaluate structured food-policy profiles with LLMs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one extraction method over a corpus and write a journal.
    Extract(ExtractArgs),
    /// Score a journal against the corpus gold labels.
    Evaluate(EvaluateArgs),
    /// Score several journals over the same corpus into one report.
    Compare(CompareArgs),
    /// Inspect or trim the response cache.
    #[command(subcommand)]
    Cache(CacheCommand),
}

fn de_parsed<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: Display,
{
    Option::<String>::deserialize(d)?
        .map(|s| s.parse().map_err(serde::de::Error::custom))
        .transpose()
}

/// Every extraction setting. Each one can come from a flag or from the
/// `--config` JSON file; flags win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    /// Corpus file (.csv or .jsonl).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Corpus format; inferred from the extension when omitted.
    #[arg(long)]
    #[serde(default, deserialize_with = "de_parsed")]
    pub format: Option<CorpusFormat>,
    /// role-based, zero-shot, few-shot or chain-of-thought.
    #[arg(long)]
    #[serde(default, deserialize_with = "de_parsed")]
    pub method: Option<MethodId>,
    /// http, mock or replay.
    #[arg(long)]
    #[serde(default, deserialize_with = "de_parsed")]
    pub backend: Option<BackendKind>,
    /// OpenAI-compatible endpoint root for the http backend.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Model identifier sent to the backend (default meta-llama/Llama-3.3-70B-Instruct-Turbo).
    #[arg(long)]
    pub model: Option<String>,
    /// Directory whose template files replace the built-in ones.
    #[arg(long)]
    pub template_dir: Option<PathBuf>,
    /// Few-shot exemplars drawn from the corpus (default 2).
    #[arg(long)]
    pub exemplar_k: Option<usize>,
    /// Tie-break seed for exemplar selection (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum concurrent backend calls (default 4).
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Response cache directory (default cache).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Where the journal and manifest go (default runs).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// JSON object mapping `record_id/Source` to a canned response.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// JSON taxonomy extension (extra states, aliases, strategy groups).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Completion token budget per request (default 1024).
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// HTTP attempts per request, retries included.
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// Process records one at a time.
    #[arg(long)]
    pub sequential: Option<bool>,
}

macro_rules! prefer {
    ($a:expr, $b:expr, $($field:ident),*) => {
        RunOptions { $($field: $a.$field.or($b.$field)),* }
    };
}

impl RunOptions {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set here take precedence over `fallback`.
    pub fn or(self, fallback: RunOptions) -> RunOptions {
        prefer!(
            self,
            fallback,
            corpus,
            format,
            method,
            backend,
            base_url,
            model,
            template_dir,
            exemplar_k,
            seed,
            concurrency,
            cache_dir,
            output_dir,
            mock_script,
            taxonomy,
            max_tokens,
            max_attempts,
            sequential
        )
    }

    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let corpus_path = self
            .corpus
            .ok_or_else(|| CliError::Config("--corpus is required".into()))?;
        let format = match self.format {
            Some(f) => f,
            None => CorpusFormat::from_path(&corpus_path).ok_or_else(|| {
                CliError::Config(format!(
                    "cannot infer format of {}; pass --format",
                    corpus_path.display()
                ))
            })?,
        };
        let method = self
            .method
            .ok_or_else(|| CliError::Config("--method is required".into()))?;
        let exemplar_k = self.exemplar_k.unwrap_or(2);
        if method == MethodId::FewShot && exemplar_k == 0 {
            return Err(CliError::Config(
                "--exemplar-k must be at least 1 for few-shot".into(),
            ));
        }
        let concurrency = self.concurrency.unwrap_or(DEFAULT_IN_FLIGHT);
        if concurrency == 0 {
            return Err(CliError::Config("--concurrency must be at least 1".into()));
        }
        Ok(RunConfig {
            corpus_path,
            format,
            method,
            backend: self.backend.unwrap_or(BackendKind::Http),
            base_url: self.base_url.unwrap_or_else(|| DEFAULT_BASE_URL.into()),
            model_id: self.model.unwrap_or_else(|| DEFAULT_MODEL.into()),
            template_dir: self.template_dir,
            exemplar_k,
            seed: self.seed.unwrap_or(0),
            concurrency_limit: concurrency,
            cache_dir: self.cache_dir.unwrap_or_else(|| "cache".into()),
            output_dir: self.output_dir.unwrap_or_else(|| "runs".into()),
            mock_script: self.mock_script,
            taxonomy: self.taxonomy,
            max_tokens: self.max_tokens.unwrap_or(DEFAULT_MAX_TOKENS),
            max_attempts: self.max_attempts.unwrap_or(3).max(1),
            execution: if self.sequential.unwrap_or(false) {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub format: CorpusFormat,
    pub method: MethodId,
    pub backend: BackendKind,
    pub base_url: String,
    pub model_id: String,
    pub template_dir: Option<PathBuf>,
    pub exemplar_k: usize,
    pub seed: u64,
    pub concurrency_limit: usize,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub mock_script: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub max_tokens: u32,
    pub max_attempts: u32,
    pub execution: Execution,
}

impl RunConfig {
    pub fn journal_path(&self) -> PathBuf {
        self.output_dir
            .join(format!("{}.jsonl", self.method.name()))
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// JSON file supplying any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: RunOptions,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Journal written by `extract`.
    pub journal: PathBuf,
    /// Corpus holding the gold labels.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Where report.{md,csv,json} go; defaults to the journal's directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Write only this report format (markdown, csv or json).
    #[arg(long)]
    pub report_format: Option<ReportFormat>,
    /// Model label for the report; defaults to the journal manifest's.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Two or more journals, one report row each.
    #[arg(required = true, num_args = 2..)]
    pub journals: Vec<PathBuf>,
    /// Corpus holding the gold labels.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub report_format: Option<ReportFormat>,
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    /// Delete cache entries.
    Prune {
        #[arg(long, default_value = "cache")]
        cache_dir: PathBuf,
        /// Remove entries older than this age, e.g. 3600, 90m, 12h, 30d.
        #[arg(long, value_parser = parse_age)]
        older_than: Option<u64>,
        /// Only consider entries for this model.
        #[arg(long)]
        model: Option<String>,
        /// Remove every entry.
        #[arg(long, conflicts_with_all = ["older_than", "model"])]
        all: bool,
    },
    /// Summarize cache contents.
    Stats {
        #[arg(long, default_value = "cache")]
        cache_dir: PathBuf,
    },
}

fn parse_age(s: &str) -> Result<u64, String> {
    let (digits, unit) = match s.char_indices().find(|(_, c)| !c.is_ascii_digit()) {
        Some((i, _)) => s.split_at(i),
        None => (s, "s"),
    };
    let n: u64 = digits.parse().map_err(|_| format!("invalid age {s:?}"))?;
    let scale = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3600,
        "d" => 86_400,
        _ => return Err(format!("invalid age unit in {s:?} (use s, m, h or d)")),
    };
    Ok(n * scale)
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("journals come from different corpora: {0}")]
    CorpusMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load_taxonomy(path: Option<&Path>) -> Result<Taxonomy, CliError> {
    Ok(match path {
        Some(p) => Taxonomy::from_path(p)?,
        None => Taxonomy::default(),
    })
}

fn load(
    path: &Path,
    format: Option<CorpusFormat>,
    taxonomy: &Taxonomy,
) -> Result<Corpus, CliError> {
    let format = match format.or_else(|| CorpusFormat::from_path(path)) {
        Some(f) => f,
        None => {
            return Err(CliError::Config(format!(
                "cannot infer format of {}; pass --format",
                path.display()
            )))
        }
    };
    Ok(load_corpus(path, format, taxonomy)?)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Extract(args) => cmd_extract(args, out, err),
        Command::Evaluate(args) => cmd_evaluate(args, out),
        Command::Compare(args) => cmd_compare(args, out),
        Command::Cache(cmd) => cmd_cache(cmd, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FATAL
        }
    }
}

pub fn cmd_extract(
    args: ExtractArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let file = match &args.config {
        Some(path) => RunOptions::from_file(path)?,
        None => RunOptions::default(),
    };
    let config = args.options.or(file).resolve()?;
    extract(&config, out, err)
}

/// Runs one extraction with a resolved configuration.
pub fn extract(
    config: &RunConfig,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let taxonomy = load_taxonomy(config.taxonomy.as_deref())?;
    let corpus = load(&config.corpus_path, Some(config.format), &taxonomy)?;
    let templates = match &config.template_dir {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::builtin(),
    };

    let (backend, cache) = match config.backend {
        BackendKind::Mock => {
            let path = config.mock_script.as_ref().ok_or_else(|| {
                CliError::Config("--mock-script is required for the mock backend".into())
            })?;
            (BackendConfig::Mock(MockScript::from_path(path)?), None)
        }
        BackendKind::Replay => (
            BackendConfig::Replay,
            Some(ResponseCache::new(&config.cache_dir)),
        ),
        BackendKind::Http => {
            let mut http = HttpConfig::new(&config.base_url).with_env_key();
            http.max_attempts = config.max_attempts;
            (
                BackendConfig::Http(http),
                Some(ResponseCache::new(&config.cache_dir)),
            )
        }
    };
    let gateway = Gateway::new(backend, cache, config.concurrency_limit)?;

    let (records, exemplar_ids): (Vec<&PolicyRecord>, Vec<String>) =
        if config.method == MethodId::FewShot {
            let split = select_exemplars(&corpus, config.exemplar_k, config.seed)?;
            let records = split
                .eval_ids
                .iter()
                .filter_map(|id| corpus.get(id))
                .collect();
            (records, split.exemplar_ids)
        } else {
            (corpus.records().iter().collect(), Vec::new())
        };
    let exemplars: Vec<_> = exemplar_ids
        .iter()
        .filter_map(|id| corpus.get(id))
        .filter_map(|r| r.gold.as_ref().map(|g| (r, g)))
        .collect();

    let mut extractor = Extractor::new(&gateway, &templates, &taxonomy, &config.model_id)
        .with_execution(config.execution);
    extractor.max_tokens = config.max_tokens;
    let outcome = extractor.run_corpus(&records, config.method, &exemplars);

    let journal_path = config.journal_path();
    let journal = JournalWriter::create(&journal_path)?;
    for e in &outcome.extractions {
        journal.append(e)?;
    }
    journal.finish()?;

    let degraded = outcome.degraded();
    let manifest = RunManifest {
        corpus_digest: corpus.digest(),
        method: config.method,
        model_id: config.model_id.clone(),
        backend: format!("{:?}", config.backend).to_lowercase(),
        template_digests: templates
            .templates()
            .iter()
            .map(|t| (t.kind().file_name().to_string(), t.digest()))
            .collect(),
        exemplar_ids,
        records: records.len(),
        completed: outcome.extractions.len(),
        degraded,
        created_at: RunManifest::timestamp(),
    };
    manifest.write(&manifest_path(&journal_path))?;

    if let Some(e) = outcome.error {
        let _ = writeln!(
            err,
            "error: {e} ({} of {} records written to {})",
            outcome.extractions.len(),
            records.len(),
            journal_path.display()
        );
        return Ok(EXIT_FATAL);
    }
    for e in outcome.extractions.iter().filter(|e| e.is_degraded()) {
        let fields: Vec<&str> = e.hallucinations.iter().map(|h| h.field.as_str()).collect();
        let _ = writeln!(
            err,
            "warning: record {} degraded ({} missing, unrecognized: [{}])",
            e.record_id,
            e.missing_count(),
            fields.join(", ")
        );
    }
    let _ = writeln!(
        out,
        "{}: {} records, {} degraded -> {}",
        config.method.label(),
        outcome.extractions.len(),
        degraded,
        journal_path.display()
    );
    Ok(if degraded > 0 { EXIT_DEGRADED } else { EXIT_OK })
}

fn write_reports(
    reports: &[EvalReport],
    dir: &Path,
    only: Option<ReportFormat>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let formats = match only {
        Some(f) => vec![f],
        None => ReportFormat::ALL.to_vec(),
    };
    for format in formats {
        let path = dir.join(format!("report.{}", format.extension()));
        std::fs::write(&path, render_report(reports, format)).map_err(io_err(&path))?;
    }
    let _ = write!(
        out,
        "{}",
        render_report(reports, only.unwrap_or(ReportFormat::Markdown))
    );
    Ok(())
}

fn manifest_for(journal: &Path) -> Option<RunManifest> {
    RunManifest::read(&manifest_path(journal)).ok()
}

pub fn cmd_evaluate(args: EvaluateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let taxonomy = load_taxonomy(args.taxonomy.as_deref())?;
    let corpus = load(&args.corpus, args.format, &taxonomy)?;
    let extractions = read_journal(&args.journal)?;
    let manifest = manifest_for(&args.journal);
    if let Some(m) = &manifest {
        if m.corpus_digest != corpus.digest() {
            return Err(CliError::CorpusMismatch(format!(
                "{} was produced from a different corpus than {}",
                args.journal.display(),
                args.corpus.display()
            )));
        }
    }
    let model_id = args
        .model
        .or_else(|| manifest.map(|m| m.model_id))
        .unwrap_or_else(|| "unknown".into());
    let report = build_report_with(
        &extractions,
        &corpus,
        taxonomy.groups(),
        &model_id,
        Execution::default(),
    )?;
    let dir = args
        .output_dir
        .or_else(|| args.journal.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| ".".into());
    write_reports(&[report], &dir, args.report_format, out)?;
    Ok(EXIT_OK)
}

pub fn cmd_compare(args: CompareArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let taxonomy = load_taxonomy(args.taxonomy.as_deref())?;
    let corpus = load(&args.corpus, args.format, &taxonomy)?;
    let digest = corpus.digest();
    let mut reports = Vec::with_capacity(args.journals.len());
    for journal in &args.journals {
        let manifest = RunManifest::read(&manifest_path(journal))?;
        if manifest.corpus_digest != digest {
            return Err(CliError::CorpusMismatch(format!(
                "{} does not match {}",
                journal.display(),
                args.corpus.display()
            )));
        }
        let extractions = read_journal(journal)?;
        reports.push(build_report_with(
            &extractions,
            &corpus,
            taxonomy.groups(),
            &manifest.model_id,
            Execution::default(),
        )?);
    }
    write_reports(&reports, &args.output_dir, args.report_format, out)?;
    Ok(EXIT_OK)
}

pub fn cmd_cache(cmd: CacheCommand, out: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        CacheCommand::Stats { cache_dir } => {
            let stats = ResponseCache::new(&cache_dir).stats();
            let _ = writeln!(out, "entries: {}", stats.entries);
            let _ = writeln!(out, "bytes: {}", stats.bytes);
            let _ = writeln!(out, "unreadable: {}", stats.unreadable);
            for (model, n) in &stats.models {
                let _ = writeln!(out, "model {model}: {n}");
            }
        }
        CacheCommand::Prune {
            cache_dir,
            older_than,
            model,
            all,
        } => {
            if !all && older_than.is_none() && model.is_none() {
                return Err(CliError::Config(
                    "cache prune needs --older-than, --model or --all".into(),
                ));
            }
            let cutoff = older_than.map(|age| unix_now().saturating_sub(age));
            let summary = ResponseCache::new(&cache_dir)
                .prune(cutoff, model.as_deref())
                .map_err(io_err(&cache_dir))?;
            let _ = writeln!(out, "removed {}, kept {}", summary.removed, summary.kept);
        }
    }
    Ok(EXIT_OK)
}
