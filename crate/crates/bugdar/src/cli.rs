//! Command-line entry points. [`run`] returns the process exit status:
//! 0 clean, 1 findings at or above the gate (or a flagged problem), 2 usage
//! or configuration error.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bugdar_core::analysis::{render_markdown, Severity};
use bugdar_core::diff::PullRequestRef;
use bugdar_core::evaluation::{MatchConfig, DEFAULT_DESCRIPTION_THRESHOLD};
use bugdar_core::retrieval::{DocKind, Index};
use clap::{Parser, Subcommand};

use crate::clock::{Clock, SystemClock, TokioSleeper};
use crate::config::AppConfig;
use crate::eval::{load_dataset, render_table, run_eval, EvalError, RagMode};
use crate::github::GitHubClient;
use crate::ingest::{ingest_dir, load_index};
use crate::pipeline::{Analyzer, Pipeline, PipelineError};
use crate::server::{serve, PipelineDispatcher, WebhookState};
use crate::slack::SlackNotifier;
use crate::store::{LedgerBook, Store};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bugdar", version, about = "Security review for pull requests")]
pub struct Cli {
    /// Configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory for reports, the credit ledger and ingested context.
    #[arg(long, global = true, value_name = "DIR")]
    pub store: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the GitHub webhook endpoint.
    Serve {
        /// Listen address, overriding `github.listen`.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Analyze a local diff and print the report.
    Analyze {
        /// Unified diff file, or `-` for standard input.
        #[arg(required_unless_present = "range")]
        input: Option<PathBuf>,
        /// Git revision range to diff instead, e.g. `main..HEAD`.
        #[arg(long, conflicts_with = "input")]
        range: Option<String>,
        /// Lowest severity that fails the run (exit 1).
        #[arg(long, value_parser = parse_severity)]
        gate: Option<Severity>,
        /// Skip project-context retrieval.
        #[arg(long)]
        no_rag: bool,
        /// Print the stored report as JSON instead of markdown.
        #[arg(long)]
        json: bool,
    },
    /// Ingest a directory of project documents for retrieval.
    Ingest {
        dir: PathBuf,
        /// Force one document kind for every file.
        #[arg(long, value_parser = parse_kind)]
        kind: Option<DocKind>,
    },
    /// Evaluate against a labelled dataset.
    Eval {
        dataset: PathBuf,
        /// Retrieval setting(s) to evaluate; defaults to the configured one.
        #[arg(long, value_enum)]
        rag: Option<RagMode>,
        /// Also write the full results as JSON to this path.
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
        /// Token-Jaccard threshold for description matches.
        #[arg(long, default_value_t = DEFAULT_DESCRIPTION_THRESHOLD)]
        threshold: f64,
    },
    /// Show a stored report, or list reports when no id is given.
    Report {
        id: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Show the credit balance and recent ledger entries.
    Credits {
        #[arg(long, default_value_t = 10)]
        last: usize,
    },
}

fn parse_severity(s: &str) -> Result<Severity, String> {
    Severity::parse(s).ok_or_else(|| format!("unknown severity {s:?}"))
}

fn parse_kind(s: &str) -> Result<DocKind, String> {
    DocKind::parse(s).ok_or_else(|| format!("unknown document kind {s:?}"))
}

/// A failure with its exit status.
struct Failure(i32, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_USAGE, e.to_string())
    }
}

type CmdResult = Result<i32, Failure>;

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ =
                if e.use_stderr() { err.write_all(rendered.as_bytes()) } else { out.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start runtime: {e}");
            return EXIT_USAGE;
        }
    };
    match runtime.block_on(dispatch(cli, out, err)) {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

async fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let mut config = AppConfig::load(cli.config.as_deref())?;
    if let Some(store) = cli.store {
        config.store = store;
    }
    match cli.command {
        Command::Serve { listen } => cmd_serve(config, listen, err).await,
        Command::Analyze { input, range, gate, no_rag, json } => {
            let text = read_diff(input.as_deref(), range.as_deref())?;
            let gate = gate.unwrap_or(config.severity_gate);
            if no_rag {
                config.rag_enabled = false;
            }
            cmd_analyze(&config, &text, gate, json, out, err).await
        }
        Command::Ingest { dir, kind } => cmd_ingest(&config, &dir, kind, out, err),
        Command::Eval { dataset, rag, json, threshold } => {
            cmd_eval(&config, &dataset, rag, json.as_deref(), threshold, out, err).await
        }
        Command::Report { id, json } => cmd_report(&config, id.as_deref(), json, out),
        Command::Credits { last } => cmd_credits(&config, last, out),
    }
}

fn read_diff(input: Option<&Path>, range: Option<&str>) -> Result<String, Failure> {
    if let Some(range) = range {
        let output = std::process::Command::new("git")
            .args(["diff", "--no-color", "--no-ext-diff", range])
            .output()
            .map_err(|e| Failure(EXIT_USAGE, format!("running git diff: {e}")))?;
        if !output.status.success() {
            return Err(Failure(
                EXIT_USAGE,
                format!("git diff {range}: {}", String::from_utf8_lossy(&output.stderr).trim()),
            ));
        }
        return String::from_utf8(output.stdout)
            .map_err(|_| Failure(EXIT_USAGE, "git diff output is not UTF-8".into()));
    }
    match input {
        Some(p) if p == Path::new("-") => {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text)?;
            Ok(text)
        }
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure(EXIT_USAGE, format!("{}: {e}", p.display()))),
        None => Err(Failure(EXIT_USAGE, "no diff given".into())),
    }
}

fn open_index(config: &AppConfig, store: &Store) -> Result<Arc<Index>, Failure> {
    if config.rag_enabled {
        Ok(Arc::new(load_index(store)?))
    } else {
        Ok(Arc::new(Index::default()))
    }
}

fn analyzer(config: &AppConfig, store: &Store) -> Result<Analyzer, Failure> {
    let providers = config.providers(Arc::new(TokioSleeper), |k| std::env::var(k).ok())?;
    Ok(Analyzer::new(config.pipeline_settings()?, Arc::new(providers), open_index(config, store)?))
}

fn open_ledger(config: &AppConfig, store: &Store) -> Result<Arc<LedgerBook>, Failure> {
    LedgerBook::open(store, config.opening_balance, config.rate_card())
        .map(Arc::new)
        .map_err(|e| Failure(EXIT_USAGE, format!("{e} (inspect with `bugdar credits`)")))
}

async fn cmd_analyze(
    config: &AppConfig,
    text: &str,
    gate: Severity,
    json: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let store = Arc::new(Store::open(&config.store)?);
    let ledger = open_ledger(config, &store)?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let pipeline = Pipeline::new(analyzer(config, &store)?, ledger, store.clone(), clock);
    let outcome = pipeline.analyze_diff(&PullRequestRef::local(text), text).await.map_err(|e| match e {
        PipelineError::Diff(d) => Failure(EXIT_USAGE, format!("diff parse error: {d}")),
        other => Failure(EXIT_USAGE, other.to_string()),
    })?;
    let report = outcome.report;
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write!(out, "{}", render_markdown(&report))?;
    }
    writeln!(err, "report {} stored in {}", report.report_id, store.root().display())?;
    Ok(match report.max_severity() {
        Some(s) if s >= gate => EXIT_FINDINGS,
        _ => EXIT_OK,
    })
}

fn cmd_ingest(
    config: &AppConfig,
    dir: &Path,
    kind: Option<DocKind>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let store = Store::open(&config.store)?;
    let summary = ingest_dir(&store, dir, kind)?;
    if summary.ingested() == 0 {
        writeln!(err, "warning: 0 documents ingested from {}", dir.display())?;
    }
    writeln!(out, "{}", summary.describe())?;
    for (path, reason) in &summary.skipped {
        writeln!(err, "skipped {}: {reason}", path.display())?;
    }
    writeln!(err, "index holds {} document(s)", summary.index_size)?;
    Ok(EXIT_OK)
}

async fn cmd_eval(
    config: &AppConfig,
    dataset_dir: &Path,
    rag: Option<RagMode>,
    json: Option<&Path>,
    threshold: f64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Failure(EXIT_USAGE, format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let dataset = match load_dataset(dataset_dir) {
        Ok(d) => d,
        Err(e @ EvalError::EmptyDataset(_)) => return Err(Failure(EXIT_FINDINGS, e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let rag = rag.unwrap_or(if config.rag_enabled { RagMode::On } else { RagMode::Off });
    let mut config = config.clone();
    config.rag_enabled = rag != RagMode::Off;
    let store = Store::open(&config.store)?;
    let analyzer = analyzer(&config, &store)?;
    let report = run_eval(&dataset, &analyzer, rag, &MatchConfig { description_threshold: threshold }).await;
    write!(out, "{}", render_table(&report))?;
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .map_err(|e| Failure(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    }
    for s in &report.skipped {
        writeln!(err, "skipped {}: {}", s.path.display(), s.reason)?;
    }
    for s in report.samples.iter().filter(|s| s.error.is_some()) {
        writeln!(err, "failed {}: {}", s.sample_id, s.error.as_deref().unwrap_or_default())?;
    }
    Ok(if report.has_failures() { EXIT_FINDINGS } else { EXIT_OK })
}

fn cmd_report(config: &AppConfig, id: Option<&str>, json: bool, out: &mut dyn Write) -> CmdResult {
    let store = Store::open(&config.store)?;
    match id {
        Some(id) => {
            let report = store.load(id)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                write!(out, "{}", render_markdown(&report))?;
            }
        }
        None => {
            for r in store.reports()? {
                writeln!(
                    out,
                    "{}  {}  {} finding(s)  created_at_ms={}",
                    r.report_id,
                    r.pr,
                    r.findings.len(),
                    r.created_at_ms
                )?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_credits(config: &AppConfig, last: usize, out: &mut dyn Write) -> CmdResult {
    let store = Store::open(&config.store)?;
    let stored = store.read_ledger(config.opening_balance)?;
    let verdict = stored.verify();
    match &verdict {
        Ok(_) => writeln!(out, "Ledger: OK")?,
        Err(e) => writeln!(out, "Ledger: CORRUPT ({e})")?,
    }
    writeln!(out, "Opening balance: {} micro-credits", stored.opening_balance)?;
    writeln!(out, "Balance: {} micro-credits", stored.balance())?;
    writeln!(out, "Entries: {}", stored.entries.len())?;
    let skip = stored.entries.len().saturating_sub(last);
    for e in &stored.entries[skip..] {
        writeln!(
            out,
            "  #{} t={} {} prompt={} completion={} cost={} balance={}",
            e.seq,
            e.timestamp_ms,
            e.model_id,
            e.usage.prompt_tokens,
            e.usage.completion_tokens,
            e.cost,
            e.balance_after
        )?;
    }
    Ok(if verdict.is_ok() { EXIT_OK } else { EXIT_FINDINGS })
}

async fn cmd_serve(config: AppConfig, listen: Option<String>, err: &mut dyn Write) -> CmdResult {
    config.validate_for_serve()?;
    let store = Arc::new(Store::open(&config.store)?);
    let ledger = open_ledger(&config, &store)?;
    let token = config.github.token.clone().unwrap_or_default();
    let secret = config.github.webhook_secret.clone().unwrap_or_default();
    let github = Arc::new(GitHubClient::new(&config.github.api_base, token, Arc::new(TokioSleeper)));
    let mut pipeline =
        Pipeline::new(analyzer(&config, &store)?, ledger, store, Arc::new(SystemClock)).with_code_host(github);
    if let Some(url) = &config.slack.webhook_url {
        pipeline = pipeline.with_notifier(Arc::new(SlackNotifier::new(url)));
    }
    let dispatcher = Arc::new(PipelineDispatcher::new(Arc::new(pipeline), config.worker_limit));
    let addr = listen.unwrap_or_else(|| config.github.listen.clone());
    let listener =
        tokio::net::TcpListener::bind(&addr).await.map_err(|e| Failure(EXIT_USAGE, format!("bind {addr}: {e}")))?;
    writeln!(err, "listening on {}", listener.local_addr()?)?;
    let state = WebhookState::new(secret.into_bytes(), dispatcher.clone());
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    writeln!(err, "shutting down; waiting for in-flight analyses")?;
    dispatcher.drain().await;
    Ok(EXIT_OK)
}
