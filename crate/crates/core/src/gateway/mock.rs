//! Offline providers: a scripted lookup table and a pattern-rule analyzer.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, GatewayError, Provider, TokenUsage};
use crate::analysis::finding::{render_findings_block, FindingRecord};
use crate::chunking::{estimate_tokens, parse_rendered};
use crate::diff::LineKind;

pub const RULE_MOCK_MODEL: &str = "mock-rules";

/// A canned reply with the usage it reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub text: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

impl ScriptedReply {
    pub fn new(text: impl Into<String>, prompt_tokens: u64, completion_tokens: u64) -> Self {
        ScriptedReply { text: text.into(), prompt_tokens, completion_tokens }
    }
}

/// Replies looked up by [`ChatRequest::prompt_digest`]. An optional fallback
/// answers every unmapped prompt; without one, unmapped prompts fail.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedProvider {
    #[serde(default)]
    pub replies: BTreeMap<String, ScriptedReply>,
    #[serde(default)]
    pub fallback: Option<ScriptedReply>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        ScriptedProvider::default()
    }

    pub fn with_reply(mut self, request: &ChatRequest, reply: ScriptedReply) -> Self {
        self.replies.insert(request.prompt_digest(), reply);
        self
    }

    pub fn with_fallback(mut self, reply: ScriptedReply) -> Self {
        self.fallback = Some(reply);
        self
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let digest = request.prompt_digest();
        let reply = self.replies.get(&digest).or(self.fallback.as_ref()).ok_or(GatewayError::UnmappedPrompt(digest))?;
        Ok(ChatResponse {
            text: reply.text.clone(),
            usage: TokenUsage::new(reply.prompt_tokens, reply.completion_tokens),
            model_id: request.model_id.clone(),
            latency_ms: 0,
        })
    }
}

struct Rule {
    patterns: &'static [&'static str],
    class: &'static str,
    severity: &'static str,
    title: &'static str,
    description: &'static str,
    impact: &'static str,
    remediation: &'static str,
    confidence: f64,
}

const RULES: &[Rule] = &[
    Rule {
        patterns: &[".call{value:", ".call.value("],
        class: "reentrancy",
        severity: "high",
        title: "Reentrancy through value-bearing external call",
        description: "A low-level call transfers value to an external address before contract state is updated, so the callee can re-enter the function.",
        impact: "An attacker contract can re-enter and withdraw funds repeatedly, draining the contract balance.",
        remediation: "Update balances before the external call (checks-effects-interactions) or guard the function with a reentrancy lock.",
        confidence: 0.9,
    },
    Rule {
        patterns: &["pickle.loads("],
        class: "insecure_deserialization",
        severity: "high",
        title: "Insecure deserialization with pickle",
        description: "Data passed to pickle.loads may be attacker controlled, and unpickling untrusted data can execute arbitrary code.",
        impact: "Remote code execution in the process that deserializes the payload.",
        remediation: "Use a data-only format such as JSON for untrusted input, or authenticate payloads before unpickling.",
        confidence: 0.9,
    },
    Rule {
        patterns: &["unsafe {"],
        class: "unsafe_block",
        severity: "medium",
        title: "Use of unsafe block",
        description: "Code inside an unsafe block bypasses the compiler's memory safety checks.",
        impact: "Memory corruption or undefined behavior if the block's invariants are violated.",
        remediation: "Document the safety invariants of the block or replace it with a safe abstraction.",
        confidence: 0.6,
    },
];

fn scan_line(path: &str, line_no: u64, text: &str, out: &mut Vec<FindingRecord>) {
    for rule in RULES {
        if rule.patterns.iter().any(|p| text.contains(p)) {
            out.push(FindingRecord {
                title: Some(rule.title.into()),
                class: Some(rule.class.into()),
                severity: Some(rule.severity.into()),
                description: Some(rule.description.into()),
                impact: Some(rule.impact.into()),
                remediation: Some(rule.remediation.into()),
                file: Some(path.into()),
                line_start: Some(line_no),
                line_end: Some(line_no),
                confidence: Some(rule.confidence),
            });
        }
    }
}

/// Pattern-rule analysis of a chunk, emitted as a findings block.
///
/// On rendered chunk text only added lines are scanned and findings carry
/// their file and new-side line. Any other text is scanned line by line
/// against the pseudo-file `<input>`. The `unsafe {` rule fires on every
/// unsafe block, sound or not.
pub fn rule_mock_analyze(chunk_text: &str) -> String {
    let mut records = Vec::new();
    let rendered = parse_rendered(chunk_text);
    if rendered.is_empty() {
        for (i, line) in chunk_text.lines().enumerate() {
            scan_line("<input>", i as u64 + 1, line, &mut records);
        }
    } else {
        for line in rendered.iter().filter(|l| l.kind == LineKind::Added) {
            scan_line(line.path, line.new_line.expect("added lines are numbered"), line.text, &mut records);
        }
    }
    let summary = match records.len() {
        0 => "Rule-based scan found no matching patterns.\n",
        _ => "Rule-based scan matched the following patterns.\n",
    };
    let mut out = String::from(summary);
    out.push_str(&render_findings_block(&records));
    out
}

/// Analyzer that runs [`rule_mock_analyze`] over the user prompt. Reported
/// usage is the byte/4 estimate of prompt and reply.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleMockProvider;

impl Provider for RuleMockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let text = rule_mock_analyze(&request.user_prompt);
        let usage = TokenUsage::new(request.estimated_prompt_tokens(), estimate_tokens(&text) as u64);
        Ok(ChatResponse { text, usage, model_id: request.model_id.clone(), latency_ms: 0 })
    }
}
