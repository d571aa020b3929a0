//! The pull-request workflow: fetch, partition, analyze and judge each
//! chunk, aggregate, debit, persist, comment, notify.

use std::sync::{Arc, Mutex};

use bugdar_core::analysis::judge::{judge_request, resolve_selection, DEFAULT_JUDGE_CRITERION};
use bugdar_core::analysis::report::{report_id, severity_summary};
use bugdar_core::analysis::{
    aggregate, assemble_prompt, render_markdown, AnalysisError, AnalysisReport, CandidateAnalysis, ChunkFailure,
    ChunkProvenance, Finding, PromptOptions, PromptTemplate, SelectionMethod,
};
use bugdar_core::chunking::{partition, Chunk, ChunkError, TokenBudget};
use bugdar_core::diff::{change_stats, parse_unified_diff, DiffError, FileDiff, PullRequestRef};
use bugdar_core::gateway::{cost_of, LedgerEntry, LedgerError, TokenUsage, DEFAULT_MAX_RESPONSE_TOKENS};
use bugdar_core::retrieval::{Index, RetrievalHit, DEFAULT_TOP_K};
use bugdar_core::webhook::NotificationMessage;
use futures::stream::{self, StreamExt};
use thiserror::Error;

use crate::clock::Clock;
use crate::github::{CodeHost, CommentId, GitHubError};
use crate::providers::ChatProvider;
use crate::slack::{Delivery, Notifier};
use crate::store::{LedgerBook, Store, StoreError};

pub const EMPTY_DIFF_NOTE: &str = "The diff contains no textual changes to analyze.";

#[derive(Debug, Clone)]
pub struct PipelineSettings {
    pub analyzers: Vec<String>,
    pub judge_model: Option<String>,
    pub judge_criterion: String,
    pub token_budget: TokenBudget,
    pub rag_enabled: bool,
    pub retrieval_k: usize,
    pub template: PromptTemplate,
    pub max_response_tokens: u32,
    pub worker_limit: usize,
    pub post_comment: bool,
}

impl PipelineSettings {
    pub fn new(analyzers: Vec<String>, token_budget: TokenBudget) -> Self {
        PipelineSettings {
            analyzers,
            judge_model: None,
            judge_criterion: DEFAULT_JUDGE_CRITERION.into(),
            token_budget,
            rag_enabled: false,
            retrieval_k: DEFAULT_TOP_K,
            template: PromptTemplate::default(),
            max_response_tokens: DEFAULT_MAX_RESPONSE_TOKENS,
            worker_limit: 1,
            post_comment: true,
        }
    }
}

/// Observable workflow steps, in the order a run performs them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Fetch,
    Partition { chunks: usize },
    Analyze { chunk: usize, model: String },
    Judge { chunk: usize },
    Aggregate,
    Debit,
    Persist,
    Comment,
    Notify,
}

pub trait Observer: Send + Sync {
    fn record(&self, step: Step);
}

#[derive(Debug, Default)]
pub struct StepLog(Mutex<Vec<Step>>);

impl StepLog {
    pub fn steps(&self) -> Vec<Step> {
        self.0.lock().expect("step log lock").clone()
    }
}

impl Observer for StepLog {
    fn record(&self, step: Step) {
        self.0.lock().expect("step log lock").push(step);
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("fetching the diff failed: {0}")]
    Fetch(#[from] GitHubError),
    #[error("no code host configured")]
    NoCodeHost,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("insufficient credits: estimated cost {estimate} exceeds balance {balance}")]
    InsufficientCredits { estimate: u64, balance: u64 },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Outcome of one chunk: every candidate and the one kept.
#[derive(Debug, Clone)]
pub struct ChunkResult {
    pub chunk_index: usize,
    pub candidates: Vec<CandidateAnalysis>,
    pub selected: Option<usize>,
    pub selection: Option<SelectionMethod>,
    /// Model calls made for this chunk, analyzers first, judge last.
    pub calls: Vec<(String, TokenUsage)>,
}

impl ChunkResult {
    pub fn provenance(&self) -> ChunkProvenance {
        ChunkProvenance {
            chunk_index: self.chunk_index,
            selected_model: self.selected.map(|i| self.candidates[i].analyzer_model_id.clone()),
            candidate_count: self.candidates.len(),
            selection: self.selection,
        }
    }
}

/// Findings and bookkeeping from analyzing a set of chunks.
#[derive(Debug, Clone, Default)]
pub struct ChunkRun {
    pub results: Vec<ChunkResult>,
}

impl ChunkRun {
    pub fn findings(&self) -> Vec<Finding> {
        let selected: Vec<(usize, CandidateAnalysis)> =
            self.results.iter().filter_map(|r| r.selected.map(|i| (r.chunk_index, r.candidates[i].clone()))).collect();
        aggregate(&selected)
    }

    pub fn calls(&self) -> impl Iterator<Item = &(String, TokenUsage)> {
        self.results.iter().flat_map(|r| r.calls.iter())
    }

    pub fn usage_total(&self) -> TokenUsage {
        self.calls().map(|(_, u)| *u).sum()
    }

    /// Summed usage per model, in first-call order.
    pub fn charges(&self) -> Vec<(String, TokenUsage)> {
        let mut out: Vec<(String, TokenUsage)> = Vec::new();
        for (model, usage) in self.calls() {
            match out.iter_mut().find(|(m, _)| m == model) {
                Some((_, total)) => *total += *usage,
                None => out.push((model.clone(), *usage)),
            }
        }
        out
    }

    pub fn failures(&self) -> Vec<ChunkFailure> {
        self.results
            .iter()
            .filter(|r| r.selected.is_none())
            .map(|r| ChunkFailure {
                chunk_index: r.chunk_index,
                errors: r.candidates.iter().filter_map(|c| c.error.clone()).collect(),
            })
            .collect()
    }
}

/// Per-chunk analysis shared by the PR workflow and the evaluation harness.
pub struct Analyzer {
    settings: PipelineSettings,
    providers: Arc<dyn ChatProvider>,
    index: Arc<Index>,
}

impl Analyzer {
    pub fn new(settings: PipelineSettings, providers: Arc<dyn ChatProvider>, index: Arc<Index>) -> Self {
        Analyzer { settings, providers, index }
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    /// A copy with retrieval switched on or off.
    pub fn with_rag(&self, rag_enabled: bool) -> Self {
        let mut settings = self.settings.clone();
        settings.rag_enabled = rag_enabled;
        Analyzer { settings, providers: self.providers.clone(), index: self.index.clone() }
    }

    fn hits(&self, chunk_text: &str) -> Vec<RetrievalHit> {
        if self.settings.rag_enabled {
            self.index.retrieve(chunk_text, self.settings.retrieval_k)
        } else {
            Vec::new()
        }
    }

    pub async fn analyze_chunk(
        &self,
        chunk_index: usize,
        chunk: &Chunk,
        observer: Option<&dyn Observer>,
    ) -> Result<ChunkResult, AnalysisError> {
        let chunk_text = chunk.render();
        let hits = self.hits(&chunk_text);
        let mut candidates = Vec::with_capacity(self.settings.analyzers.len());
        let mut calls = Vec::new();
        for model in &self.settings.analyzers {
            if let Some(o) = observer {
                o.record(Step::Analyze { chunk: chunk_index, model: model.clone() });
            }
            let mut options = PromptOptions::new(model.clone(), self.settings.token_budget.reserved_tokens);
            options.max_response_tokens = self.settings.max_response_tokens;
            let request = assemble_prompt(chunk, &hits, &self.settings.template, &options)?;
            match self.providers.complete(&request).await {
                Ok(resp) => {
                    calls.push((model.clone(), resp.usage));
                    candidates.push(CandidateAnalysis::from_response(model.clone(), resp.text, chunk));
                }
                Err(e) => {
                    tracing::warn!(chunk = chunk_index, model = %model, error = %e, "analyzer failed");
                    candidates.push(CandidateAnalysis::failed(model.clone(), &e));
                }
            }
        }

        let responders: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].error.is_none()).collect();
        let (selected, selection) = match responders.len() {
            0 => (None, None),
            1 => (Some(responders[0]), Some(SelectionMethod::SingleCandidate)),
            _ => {
                let pool: Vec<CandidateAnalysis> = responders.iter().map(|&i| candidates[i].clone()).collect();
                let mut reply = None;
                // Without a judge model the fallback rule decides.
                if let Some(judge_model) = self.settings.judge_model.as_deref() {
                    if let Some(o) = observer {
                        o.record(Step::Judge { chunk: chunk_index });
                    }
                    let request = judge_request(&pool, judge_model, &self.settings.judge_criterion, &chunk_text)?;
                    match self.providers.complete(&request).await {
                        Ok(resp) => {
                            calls.push((judge_model.to_string(), resp.usage));
                            reply = Some(resp.text);
                        }
                        Err(e) => tracing::warn!(chunk = chunk_index, error = %e, "judge failed, using fallback"),
                    }
                }
                let (i, method) = resolve_selection(reply.as_deref(), &pool);
                (Some(responders[i]), Some(method))
            }
        };
        Ok(ChunkResult { chunk_index, candidates, selected, selection, calls })
    }

    /// Analyzes chunks with up to `worker_limit` in flight; results come
    /// back in chunk order.
    pub async fn analyze_chunks(
        &self,
        chunks: &[Chunk],
        observer: Option<&dyn Observer>,
    ) -> Result<ChunkRun, AnalysisError> {
        let pending: Vec<_> =
            chunks.iter().enumerate().map(|(i, chunk)| self.analyze_chunk(i, chunk, observer)).collect();
        let results: Vec<Result<ChunkResult, AnalysisError>> =
            stream::iter(pending).buffered(self.settings.worker_limit.max(1)).collect().await;
        Ok(ChunkRun { results: results.into_iter().collect::<Result<_, _>>()? })
    }

    /// Worst-case cost of analyzing `chunks`: twice each chunk's token
    /// estimate as prompt, per analyzer.
    pub fn preflight_estimate(&self, chunks: &[Chunk], ledger: &LedgerBook) -> Result<u64, LedgerError> {
        let mut total = 0u64;
        for chunk in chunks {
            let usage = TokenUsage::new(2 * chunk.estimated_tokens as u64, 0);
            for model in &self.settings.analyzers {
                total += cost_of(&usage, model, ledger.rates())?;
            }
        }
        Ok(total)
    }
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub report: AnalysisReport,
    pub ledger_entries: Vec<LedgerEntry>,
    /// `None` when commenting was disabled or not applicable.
    pub comment: Option<Result<Vec<CommentId>, String>>,
    pub notification: Option<Delivery>,
}

pub struct Pipeline {
    analyzer: Analyzer,
    ledger: Arc<LedgerBook>,
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    code_host: Option<Arc<dyn CodeHost>>,
    notifier: Option<Arc<dyn Notifier>>,
    observer: Option<Arc<dyn Observer>>,
}

impl Pipeline {
    pub fn new(analyzer: Analyzer, ledger: Arc<LedgerBook>, store: Arc<Store>, clock: Arc<dyn Clock>) -> Self {
        Pipeline { analyzer, ledger, store, clock, code_host: None, notifier: None, observer: None }
    }

    pub fn with_code_host(mut self, host: Arc<dyn CodeHost>) -> Self {
        self.code_host = Some(host);
        self
    }

    pub fn with_notifier(mut self, notifier: Arc<dyn Notifier>) -> Self {
        self.notifier = Some(notifier);
        self
    }

    pub fn with_observer(mut self, observer: Arc<dyn Observer>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn ledger(&self) -> &LedgerBook {
        &self.ledger
    }

    fn step(&self, step: Step) {
        if let Some(o) = &self.observer {
            o.record(step);
        }
    }

    /// The full workflow for a hosted pull request.
    pub async fn run_pipeline(&self, pr: &PullRequestRef) -> Result<PipelineOutcome, PipelineError> {
        let host = self.code_host.clone().ok_or(PipelineError::NoCodeHost)?;
        let started = self.clock.now_ms();
        let diff = host.fetch_pr_diff(pr).await?;
        self.step(Step::Fetch);
        self.execute(pr, &diff, started, Some(host.as_ref())).await
    }

    /// The workflow over a diff already in hand; nothing is posted back.
    pub async fn analyze_diff(&self, pr: &PullRequestRef, diff_text: &str) -> Result<PipelineOutcome, PipelineError> {
        let started = self.clock.now_ms();
        self.step(Step::Fetch);
        self.execute(pr, diff_text, started, None).await
    }

    async fn execute(
        &self,
        pr: &PullRequestRef,
        diff_text: &str,
        started: u64,
        host: Option<&dyn CodeHost>,
    ) -> Result<PipelineOutcome, PipelineError> {
        let files = parse_unified_diff(diff_text)?;
        let chunks = partition(&files, self.analyzer.settings.token_budget)?;
        self.step(Step::Partition { chunks: chunks.len() });

        let estimate = self.analyzer.preflight_estimate(&chunks, &self.ledger)?;
        let balance = self.ledger.balance();
        if estimate > balance {
            return Err(PipelineError::InsufficientCredits { estimate, balance });
        }

        let run = self.analyzer.analyze_chunks(&chunks, self.observer.as_deref()).await?;
        let findings = run.findings();
        self.step(Step::Aggregate);

        let now = self.clock.now_ms();
        let ledger_entries = self.ledger.debit_all(Some(&self.store), now, &run.charges())?;
        self.step(Step::Debit);

        let created_at_ms = self.clock.now_ms();
        let report = AnalysisReport {
            report_id: report_id(pr, created_at_ms),
            pr: pr.clone(),
            findings,
            chunk_count: chunks.len().max(1),
            per_chunk_provenance: run.results.iter().map(ChunkResult::provenance).collect(),
            usage_total: run.usage_total(),
            elapsed_ms: created_at_ms.saturating_sub(started),
            created_at_ms,
            chunk_failures: run.failures(),
            note: chunks.is_empty().then(|| EMPTY_DIFF_NOTE.to_string()),
        };
        self.store.persist(&report)?;
        self.step(Step::Persist);

        let comment = match host {
            Some(host) if self.analyzer.settings.post_comment => {
                let posted = host.post_comment(pr, &render_markdown(&report)).await;
                self.step(Step::Comment);
                if let Err(e) = &posted {
                    tracing::warn!(pr = %pr, error = %e, "posting the summary comment failed");
                }
                Some(posted.map_err(|e| e.to_string()))
            }
            _ => None,
        };

        let notification = match &self.notifier {
            Some(notifier) => {
                let delivery = notifier.notify(&NotificationMessage::slack(&notification_text(&report))).await;
                self.step(Step::Notify);
                if let Delivery::Failed(reason) = &delivery {
                    tracing::warn!(pr = %pr, reason = %reason, "notification not delivered");
                }
                Some(delivery)
            }
            None => None,
        };

        Ok(PipelineOutcome { report, ledger_entries, comment, notification })
    }
}

pub fn notification_text(report: &AnalysisReport) -> String {
    let summary = match severity_summary(&report.findings) {
        s if s.is_empty() => "no findings".to_string(),
        s => s,
    };
    let sha = report.pr.head_sha.get(..7).unwrap_or(&report.pr.head_sha);
    format!("Security review for {} at {sha}: {summary} (report {}).", report.pr, report.report_id)
}

/// Files of a diff plus its changed-line count, for throughput accounting.
pub fn diff_lines_changed(files: &[FileDiff]) -> u64 {
    change_stats(files).lines_changed
}
