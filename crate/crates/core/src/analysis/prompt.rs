use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::chunking::{estimate_tokens, Chunk};
use crate::gateway::{ChatRequest, DEFAULT_MAX_RESPONSE_TOKENS};
use crate::retrieval::RetrievalHit;

pub const CONTEXT_PLACEHOLDER: &str = "{{context}}";
pub const DIFF_PLACEHOLDER: &str = "{{diff}}";
pub const LANGUAGES_PLACEHOLDER: &str = "{{languages}}";

/// Substituted for `{{context}}` when retrieval returned nothing.
pub const NO_CONTEXT: &str = "(no project context)";

pub const DEFAULT_SYSTEM_PROMPT: &str = "\
You are a senior application security engineer reviewing a pull request. \
Report only concrete, exploitable or clearly risky issues introduced or touched by the change, \
for code written in: {{languages}}.

Answer with exactly one findings block. The block starts with a line containing only ===FINDINGS=== \
and ends with a line containing only ===END===. Between them write one JSON object \
{\"findings\": [...]} where every entry has the fields title, class (lower_snake vulnerability class), \
severity (critical, high, medium, low or informational), description, impact, remediation, \
file, line_start, line_end and confidence (a number between 0 and 1). \
Line numbers are the new-side numbers shown in the left column of the diff. \
Use an empty findings array when nothing needs attention.";

pub const DEFAULT_USER_PROMPT: &str = "\
Languages in this change: {{languages}}

----- PROJECT CONTEXT -----
{{context}}
----- END PROJECT CONTEXT -----

----- DIFF -----
{{diff}}----- END DIFF -----
";

/// Operator-editable analyzer prompt. Each placeholder must appear in at
/// least one of the two parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate { system: DEFAULT_SYSTEM_PROMPT.into(), user: DEFAULT_USER_PROMPT.into() }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        for placeholder in [CONTEXT_PLACEHOLDER, DIFF_PLACEHOLDER, LANGUAGES_PLACEHOLDER] {
            if !self.system.contains(placeholder) && !self.user.contains(placeholder) {
                return Err(AnalysisError::MissingPlaceholder(placeholder));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptOptions {
    pub model_id: String,
    /// Upper bound on the tokens spent on retrieved context.
    pub context_budget_tokens: usize,
    pub max_response_tokens: u32,
}

impl PromptOptions {
    pub fn new(model_id: impl Into<String>, context_budget_tokens: usize) -> Self {
        PromptOptions {
            model_id: model_id.into(),
            context_budget_tokens,
            max_response_tokens: DEFAULT_MAX_RESPONSE_TOKENS,
        }
    }
}

/// Single left-to-right pass, so substituted text is never re-expanded.
fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(pos) = rest.find("{{") {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in values {
            if let Some(after) = tail.strip_prefix(name) {
                out.push_str(value);
                rest = after;
                continue 'outer;
            }
        }
        out.push_str("{{");
        rest = &tail[2..];
    }
    out.push_str(rest);
    out
}

fn floor_char_boundary(s: &str, mut at: usize) -> usize {
    if at >= s.len() {
        return s.len();
    }
    while !s.is_char_boundary(at) {
        at -= 1;
    }
    at
}

/// Hits in score order, whole while they fit `budget_tokens`, then a
/// truncated prefix of the first hit that does not.
pub fn render_context(hits: &[RetrievalHit], budget_tokens: usize) -> String {
    if hits.is_empty() {
        return NO_CONTEXT.into();
    }
    let mut out = String::new();
    let mut used = 0;
    for hit in hits {
        let mut entry = String::new();
        let _ = writeln!(entry, "[{} score={:.3}]", hit.doc_id, hit.score);
        entry.push_str(hit.text.trim_end());
        entry.push_str("\n\n");
        let cost = estimate_tokens(&entry);
        if used + cost <= budget_tokens {
            out.push_str(&entry);
            used += cost;
            continue;
        }
        let room_bytes = (budget_tokens - used) * 4;
        let cut = floor_char_boundary(&entry, room_bytes);
        if cut > 0 {
            out.push_str(&entry[..cut]);
            if !out.ends_with('\n') {
                out.push('\n');
            }
        }
        break;
    }
    if out.is_empty() {
        return NO_CONTEXT.into();
    }
    out.truncate(out.trim_end().len());
    out
}

/// Builds the analyzer request for one chunk.
pub fn assemble_prompt(
    chunk: &Chunk,
    hits: &[RetrievalHit],
    template: &PromptTemplate,
    options: &PromptOptions,
) -> Result<ChatRequest, AnalysisError> {
    template.validate()?;
    let context = render_context(hits, options.context_budget_tokens);
    let diff = chunk.render();
    let languages: Vec<&str> = chunk.languages().into_iter().map(|l| l.as_str()).collect();
    let languages = if languages.is_empty() { String::from("unknown") } else { languages.join(", ") };
    let values = [
        (CONTEXT_PLACEHOLDER, context.as_str()),
        (DIFF_PLACEHOLDER, diff.as_str()),
        (LANGUAGES_PLACEHOLDER, languages.as_str()),
    ];
    let system = substitute(&template.system, &values);
    let user = substitute(&template.user, &values);
    Ok(ChatRequest::new(options.model_id.clone(), system, user)?.with_max_response_tokens(options.max_response_tokens))
}
