//! Choosing one candidate analysis per chunk.
//!
//! With a single candidate no judge is consulted. Otherwise the judge model
//! sees every candidate under a letter label and answers with one letter;
//! anything unusable falls back to the candidate with the most parsed
//! findings, earliest label on ties.

use alloc::format;
use alloc::string::String;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, CandidateAnalysis};
use crate::gateway::{ChatRequest, Provider, TokenUsage};

pub const DEFAULT_JUDGE_CRITERION: &str = "Select the most accurate and actionable analysis.";
pub const MAX_CANDIDATES: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    SingleCandidate,
    Judge,
    Fallback,
}

pub fn label(index: usize) -> char {
    (b'A' + index as u8) as char
}

/// Index of the first standalone capital letter naming a candidate.
pub fn parse_judge_reply(reply: &str, candidate_count: usize) -> Option<usize> {
    let chars: alloc::vec::Vec<char> = reply.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_ascii_uppercase() {
            continue;
        }
        let before_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let after_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if !(before_ok && after_ok) {
            continue;
        }
        let index = (c as u8 - b'A') as usize;
        if index < candidate_count {
            return Some(index);
        }
    }
    None
}

/// Most parsed findings; earliest candidate on ties.
pub fn fallback_choice(candidates: &[CandidateAnalysis]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.findings.len() > candidates[best].findings.len() {
            best = i;
        }
    }
    best
}

/// The judge prompt over `candidates` for the chunk rendered as `chunk_text`.
pub fn judge_request(
    candidates: &[CandidateAnalysis],
    judge_model_id: &str,
    criterion: &str,
    chunk_text: &str,
) -> Result<ChatRequest, AnalysisError> {
    if candidates.len() > MAX_CANDIDATES {
        return Err(AnalysisError::TooManyCandidates(candidates.len()));
    }
    let last = label(candidates.len().saturating_sub(1));
    let system = format!(
        "You compare security analyses of the same code change. {criterion} \
Reply with the single capital letter (A-{last}) of the analysis you choose and nothing else."
    );
    let mut user = String::new();
    let _ = writeln!(user, "----- DIFF -----\n{chunk_text}----- END DIFF -----\n");
    for (i, c) in candidates.iter().enumerate() {
        let status = if c.parse_ok { format!("{} finding(s)", c.findings.len()) } else { String::from("unparseable") };
        let _ = writeln!(user, "===== Candidate {} ({status}) =====", label(i));
        user.push_str(c.raw_text.trim_end());
        user.push_str("\n\n");
    }
    let _ = write!(user, "Which candidate (A-{last}) is best?");
    Ok(ChatRequest::new(judge_model_id, system, user)?.with_max_response_tokens(16))
}

/// Selection given the judge's reply (or `None` if the judge call failed).
pub fn resolve_selection(reply: Option<&str>, candidates: &[CandidateAnalysis]) -> (usize, SelectionMethod) {
    match reply.and_then(|r| parse_judge_reply(r, candidates.len())) {
        Some(i) => (i, SelectionMethod::Judge),
        None => (fallback_choice(candidates), SelectionMethod::Fallback),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeOutcome {
    pub index: usize,
    pub method: SelectionMethod,
    /// Tokens the judge consumed; `None` when it was not called.
    pub usage: Option<TokenUsage>,
}

/// Synchronous judge selection against `judge`.
pub fn judge_select<P: Provider>(
    candidates: &[CandidateAnalysis],
    judge_model_id: &str,
    judge: &P,
    criterion: &str,
    chunk_text: &str,
) -> Result<JudgeOutcome, AnalysisError> {
    match candidates.len() {
        0 => Err(AnalysisError::NoCandidates),
        1 => Ok(JudgeOutcome { index: 0, method: SelectionMethod::SingleCandidate, usage: None }),
        _ => {
            let request = judge_request(candidates, judge_model_id, criterion, chunk_text)?;
            let (reply, usage) = match judge.complete(&request) {
                Ok(resp) => (Some(resp.text), Some(resp.usage)),
                Err(_) => (None, None),
            };
            let (index, method) = resolve_selection(reply.as_deref(), candidates);
            Ok(JudgeOutcome { index, method, usage })
        }
    }
}
