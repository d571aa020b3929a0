//! Findings, prompts, judge selection, aggregation and report rendering.

pub mod finding;
pub mod judge;
pub mod prompt;
pub mod report;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use finding::{parse_findings, Finding, FindingRecord, Severity};
pub use judge::{judge_select, JudgeOutcome, SelectionMethod};
pub use prompt::{assemble_prompt, PromptOptions, PromptTemplate};
pub use report::{aggregate, render_markdown, AnalysisReport, ChunkFailure, ChunkProvenance};

use crate::chunking::Chunk;
use crate::gateway::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("prompt template is missing placeholder {0}")]
    MissingPlaceholder(&'static str),
    #[error("judge selection needs at least one candidate")]
    NoCandidates,
    #[error("at most 26 candidates can be judged, got {0}")]
    TooManyCandidates(usize),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One analyzer's answer for one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnalysis {
    pub analyzer_model_id: String,
    pub raw_text: String,
    pub findings: Vec<Finding>,
    pub parse_ok: bool,
    /// Entries dropped for invalid fields or a location outside the chunk.
    #[serde(default)]
    pub rejected: usize,
    /// Provider failure, when the analyzer never answered.
    #[serde(default)]
    pub error: Option<String>,
}

impl CandidateAnalysis {
    /// Parses `raw_text` and keeps only findings located inside `chunk`.
    pub fn from_response(analyzer_model_id: impl Into<String>, raw_text: String, chunk: &Chunk) -> Self {
        let analyzer_model_id = analyzer_model_id.into();
        match parse_findings(&raw_text) {
            Ok(parsed) => {
                let mut rejected = parsed.rejected.len();
                let findings: Vec<Finding> = parsed
                    .findings
                    .into_iter()
                    .filter(|f| {
                        let inside = chunk.covers(&f.file, f.line_start, f.line_end);
                        rejected += usize::from(!inside);
                        inside
                    })
                    .collect();
                CandidateAnalysis { analyzer_model_id, raw_text, findings, parse_ok: true, rejected, error: None }
            }
            Err(_) => CandidateAnalysis {
                analyzer_model_id,
                raw_text,
                findings: Vec::new(),
                parse_ok: false,
                rejected: 0,
                error: None,
            },
        }
    }

    pub fn failed(analyzer_model_id: impl Into<String>, error: &GatewayError) -> Self {
        CandidateAnalysis {
            analyzer_model_id: analyzer_model_id.into(),
            raw_text: String::new(),
            findings: Vec::new(),
            parse_ok: false,
            rejected: 0,
            error: Some(alloc::format!("{error}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunking::{partition, TokenBudget};
    use crate::diff::parse_unified_diff;
    use crate::gateway::rule_mock_analyze;

    #[test]
    fn findings_outside_the_chunk_are_rejected() {
        let files =
            parse_unified_diff("--- a/a.py\n+++ b/a.py\n@@ -1,0 +1,2 @@\n+x = pickle.loads(b)\n+y = 2\n").unwrap();
        let chunk = partition(&files, TokenBudget::new(1000, 0).unwrap()).unwrap().remove(0);
        let good = CandidateAnalysis::from_response("m", rule_mock_analyze(&chunk.render()), &chunk);
        assert!(good.parse_ok);
        assert_eq!((good.findings.len(), good.rejected), (1, 0));

        let moved = good
            .raw_text
            .replace("\"line_start\": 1", "\"line_start\": 3")
            .replace("\"line_end\": 1", "\"line_end\": 3");
        let bad = CandidateAnalysis::from_response("m", moved, &chunk);
        assert_eq!((bad.findings.len(), bad.rejected), (0, 1));

        let prose = CandidateAnalysis::from_response("m", "all good".into(), &chunk);
        assert!(!prose.parse_ok && prose.findings.is_empty());
    }
}
