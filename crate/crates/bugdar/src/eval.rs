//! Dataset-driven evaluation.
//!
//! A dataset is a directory with one subdirectory per sample. Each sample
//! holds `input.diff` (or a single `input.<ext>` source file, treated as
//! wholly added) and `truth.json`:
//!
//! ```json
//! {"source": "manual_audit", "findings": [{"class": "reentrancy", "description": "..."}]}
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bugdar_core::analysis::Finding;
use bugdar_core::chunking::partition;
use bugdar_core::diff::{change_stats, parse_unified_diff, render_unified_diff, FileDiff, Language};
use bugdar_core::evaluation::{
    compute_metrics, compute_throughput, match_findings, EvalSample, MatchConfig, MatchCounts, Metrics, SampleSource,
    Task, ThroughputStats, TruthFinding,
};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::Analyzer;

pub const TRUTH_FILE: &str = "truth.json";
pub const DIFF_INPUT: &str = "input.diff";
pub const COUNTING_NOTE: &str = "Counts are finding-level and micro-averaged over all samples.";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}: dataset directory not found")]
    MissingDataset(PathBuf),
    #[error("{0}: dataset contains no usable samples")]
    EmptyDataset(PathBuf),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RagMode {
    On,
    Off,
    Both,
}

impl RagMode {
    pub fn settings(self) -> &'static [bool] {
        match self {
            RagMode::On => &[true],
            RagMode::Off => &[false],
            RagMode::Both => &[false, true],
        }
    }
}

#[derive(Deserialize)]
struct TruthFile {
    source: SampleSource,
    #[serde(default)]
    findings: Vec<TruthFinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<EvalSample>,
    pub skipped: Vec<Skipped>,
}

fn load_sample(dir: &Path) -> Result<EvalSample, String> {
    let sample_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let truth_path = dir.join(TRUTH_FILE);
    let truth_text = std::fs::read_to_string(&truth_path).map_err(|e| format!("{}: {e}", truth_path.display()))?;
    let truth: TruthFile = serde_json::from_str(&truth_text).map_err(|e| format!("{}: {e}", truth_path.display()))?;

    let diff_path = dir.join(DIFF_INPUT);
    let (diff_or_code, language_hint) = if diff_path.exists() {
        let text = std::fs::read_to_string(&diff_path).map_err(|e| format!("{}: {e}", diff_path.display()))?;
        let lang = parse_unified_diff(&text)
            .ok()
            .and_then(|files| files.first().map(|f| f.language_hint))
            .unwrap_or(Language::Other);
        (text, lang)
    } else {
        let mut inputs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| format!("{}: {e}", dir.display()))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.file_stem().is_some_and(|s| s == "input") && p.extension().is_some())
            .collect();
        inputs.sort();
        let input = match inputs.as_slice() {
            [one] => one,
            [] => return Err(format!("{}: no input.diff or input.<ext>", dir.display())),
            _ => return Err(format!("{}: more than one input file", dir.display())),
        };
        let code = std::fs::read_to_string(input).map_err(|e| format!("{}: {e}", input.display()))?;
        let name = input.file_name().expect("has a name").to_string_lossy().into_owned();
        let lang = Language::from_path(&name);
        (render_unified_diff(&[FileDiff::all_added(&name, &code)]), lang)
    };
    Ok(EvalSample { sample_id, language_hint, diff_or_code, truth_findings: truth.findings, source: truth.source })
}

/// Loads every sample directory under `dir`, skipping and listing the ones
/// that cannot be read.
pub fn load_dataset(dir: &Path) -> Result<Dataset, EvalError> {
    if !dir.is_dir() {
        return Err(EvalError::MissingDataset(dir.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> =
        std::fs::read_dir(dir)?.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    let mut dataset = Dataset::default();
    for d in dirs {
        match load_sample(&d) {
            Ok(s) => dataset.samples.push(s),
            Err(reason) => dataset.skipped.push(Skipped { path: d, reason }),
        }
    }
    if dataset.samples.is_empty() {
        return Err(EvalError::EmptyDataset(dir.to_path_buf()));
    }
    Ok(dataset)
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleLog {
    pub sample_id: String,
    pub rag: bool,
    pub predicted: Vec<String>,
    pub truth: Vec<String>,
    pub classification: Option<MatchCounts>,
    pub description: Option<MatchCounts>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub model: String,
    pub task: Task,
    pub rag: bool,
    pub counts: MatchCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThroughputRow {
    pub rag: bool,
    pub stats: ThroughputStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub note: String,
    pub sample_count: usize,
    pub rows: Vec<EvalRow>,
    pub throughput: Vec<ThroughputRow>,
    pub samples: Vec<SampleLog>,
    pub skipped: Vec<Skipped>,
}

impl EvalReport {
    /// True when some sample could not be read or analyzed.
    pub fn has_failures(&self) -> bool {
        !self.skipped.is_empty() || self.samples.iter().any(|s| s.error.is_some())
    }

    pub fn row(&self, task: Task, rag: bool) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.task == task && r.rag == rag)
    }
}

async fn predict(analyzer: &Analyzer, sample: &EvalSample) -> Result<(Vec<Finding>, u64), String> {
    let files = parse_unified_diff(&sample.diff_or_code).map_err(|e| e.to_string())?;
    let chunks = partition(&files, analyzer.settings().token_budget).map_err(|e| e.to_string())?;
    let run = analyzer.analyze_chunks(&chunks, None).await.map_err(|e| e.to_string())?;
    Ok((run.findings(), change_stats(&files).lines_changed))
}

/// Runs every sample under each requested retrieval setting and pools the
/// match counts per task.
pub async fn run_eval(dataset: &Dataset, analyzer: &Analyzer, rag: RagMode, config: &MatchConfig) -> EvalReport {
    let model = analyzer.settings().analyzers.join("+");
    let workers = analyzer.settings().worker_limit.max(1);
    let mut rows = Vec::new();
    let mut throughput = Vec::new();
    let mut logs = Vec::new();
    for &rag_on in rag.settings() {
        let variant = analyzer.with_rag(rag_on);
        let started = Instant::now();
        let outcomes: Vec<Result<(Vec<Finding>, u64), String>> =
            stream::iter(&dataset.samples).map(|s| predict(&variant, s)).buffered(workers).collect().await;
        let elapsed = started.elapsed().as_secs_f64().max(1e-9);

        let mut pooled = Task::ALL.map(MatchCounts::zero);
        let mut lines = 0;
        let mut evaluated = 0;
        for (sample, outcome) in dataset.samples.iter().zip(outcomes) {
            let truth: Vec<String> = sample.truth_findings.iter().map(|t| t.vuln_class.clone()).collect();
            match outcome {
                Ok((findings, changed)) => {
                    let counts = Task::ALL.map(|task| match_findings(&findings, &sample.truth_findings, task, config));
                    for (p, c) in pooled.iter_mut().zip(counts) {
                        *p = *p + c;
                    }
                    lines += changed;
                    evaluated += 1;
                    logs.push(SampleLog {
                        sample_id: sample.sample_id.clone(),
                        rag: rag_on,
                        predicted: findings.iter().map(|f| f.vuln_class.clone()).collect(),
                        truth,
                        classification: Some(counts[0]),
                        description: Some(counts[1]),
                        error: None,
                    });
                }
                Err(error) => logs.push(SampleLog {
                    sample_id: sample.sample_id.clone(),
                    rag: rag_on,
                    predicted: Vec::new(),
                    truth,
                    classification: None,
                    description: None,
                    error: Some(error),
                }),
            }
        }
        for counts in pooled {
            rows.push(EvalRow {
                model: model.clone(),
                task: counts.task,
                rag: rag_on,
                counts,
                metrics: compute_metrics(&counts),
            });
        }
        if let Ok(stats) = compute_throughput(lines, evaluated, elapsed) {
            throughput.push(ThroughputRow { rag: rag_on, stats });
        }
    }
    rows.sort_by_key(|r| (r.task, r.rag));
    EvalReport {
        note: COUNTING_NOTE.into(),
        sample_count: dataset.samples.len(),
        rows,
        throughput,
        samples: logs,
        skipped: dataset.skipped.clone(),
    }
}

/// Plain-text table with one row per (task, retrieval) pair.
pub fn render_table(report: &EvalReport) -> String {
    let header = ["Model", "Task", "RAG", "Precision", "Recall", "F1", "Accuracy"].map(String::from);
    let mut table = vec![header];
    for r in &report.rows {
        table.push([
            r.model.clone(),
            r.task.label().into(),
            if r.rag { "Yes" } else { "No" }.into(),
            format!("{:.2}", r.metrics.precision),
            format!("{:.2}", r.metrics.recall),
            format!("{:.2}", r.metrics.f1),
            format!("{:.2}", r.metrics.accuracy),
        ]);
    }
    let widths: Vec<usize> =
        (0..7).map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = format!("# {}\n", report.note);
    for row in &table {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    for t in &report.throughput {
        let _ = writeln!(
            out,
            "# RAG {}: {} lines over {} samples in {:.3} s ({:.1} lines/s, {:.3} s/sample)",
            if t.rag { "on" } else { "off" },
            t.stats.lines_changed,
            t.stats.pr_count,
            t.stats.elapsed_seconds,
            t.stats.lines_per_second,
            t.stats.seconds_per_pr
        );
    }
    out
}
