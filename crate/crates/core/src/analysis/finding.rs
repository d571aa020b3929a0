use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

/// First line of a findings block.
pub const FINDINGS_OPEN: &str = "===FINDINGS===";
/// Last line of a findings block.
pub const FINDINGS_CLOSE: &str = "===END===";

pub const DEFAULT_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Informational,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    /// Most severe first.
    pub const ALL: [Severity; 5] =
        [Severity::Critical, Severity::High, Severity::Medium, Severity::Low, Severity::Informational];

    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Critical => "critical",
            Severity::High => "high",
            Severity::Medium => "medium",
            Severity::Low => "low",
            Severity::Informational => "informational",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Severity::ALL.into_iter().find(|v| v.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One validated vulnerability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub finding_id: String,
    pub title: String,
    pub vuln_class: String,
    pub severity: Severity,
    pub description: String,
    pub impact: String,
    pub remediation: String,
    pub file: String,
    pub line_start: u64,
    pub line_end: u64,
    pub confidence: f64,
}

impl Finding {
    /// Deterministic id over class, location and title.
    pub fn compute_id(vuln_class: &str, file: &str, line_start: u64, line_end: u64, title: &str) -> String {
        let range = alloc::format!("{line_start}-{line_end}");
        let mut id = sha256_hex(&[vuln_class.as_bytes(), file.as_bytes(), range.as_bytes(), title.as_bytes()]);
        id.truncate(16);
        id
    }

    pub fn refresh_id(&mut self) {
        self.finding_id =
            Finding::compute_id(&self.vuln_class, &self.file, self.line_start, self.line_end, &self.title);
    }

    pub fn location(&self) -> String {
        alloc::format!("{}:{}-{}", self.file, self.line_start, self.line_end)
    }

    pub fn width(&self) -> u64 {
        self.line_end - self.line_start
    }

    pub fn overlaps(&self, other: &Finding) -> bool {
        self.line_start <= other.line_end && other.line_start <= self.line_end
    }
}

/// Wire shape of one finding inside a findings block. Every field is
/// optional here so that a single bad entry can be rejected without losing
/// the rest of the block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FindingRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remediation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_start: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_end: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl From<&Finding> for FindingRecord {
    fn from(f: &Finding) -> Self {
        FindingRecord {
            title: Some(f.title.clone()),
            class: Some(f.vuln_class.clone()),
            severity: Some(f.severity.as_str().into()),
            description: Some(f.description.clone()),
            impact: Some(f.impact.clone()),
            remediation: Some(f.remediation.clone()),
            file: Some(f.file.clone()),
            line_start: Some(f.line_start),
            line_end: Some(f.line_end),
            confidence: Some(f.confidence),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FindingRejection {
    #[error("missing or empty field {0}")]
    Missing(&'static str),
    #[error("severity {0:?} is not one of critical/high/medium/low/informational")]
    BadSeverity(String),
    #[error("line range {0}-{1} is not a positive ascending range")]
    BadRange(u64, u64),
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(String),
    #[error("finding is not an object with the expected field types")]
    WrongShape,
}

/// Normalizes a class tag to lower_snake.
pub fn normalize_class(raw: &str) -> String {
    let mut out = String::new();
    let mut pending_sep = false;
    for c in raw.trim().chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(c.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

fn required(value: Option<String>, field: &'static str) -> Result<String, FindingRejection> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v.trim().to_string()),
        _ => Err(FindingRejection::Missing(field)),
    }
}

impl FindingRecord {
    pub fn validate(self) -> Result<Finding, FindingRejection> {
        let title = required(self.title, "title")?;
        let vuln_class = normalize_class(&required(self.class, "class")?);
        if vuln_class.is_empty() {
            return Err(FindingRejection::Missing("class"));
        }
        let severity_raw = required(self.severity, "severity")?;
        let severity = Severity::parse(&severity_raw).ok_or(FindingRejection::BadSeverity(severity_raw))?;
        let file = required(self.file, "file")?;
        let line_start = self.line_start.ok_or(FindingRejection::Missing("line_start"))?;
        let line_end = self.line_end.unwrap_or(line_start);
        if line_start == 0 || line_end < line_start {
            return Err(FindingRejection::BadRange(line_start, line_end));
        }
        let confidence = self.confidence.unwrap_or(DEFAULT_CONFIDENCE);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(FindingRejection::BadConfidence(alloc::format!("{confidence}")));
        }
        let mut finding = Finding {
            finding_id: String::new(),
            title,
            vuln_class,
            severity,
            description: self.description.unwrap_or_default(),
            impact: self.impact.unwrap_or_default(),
            remediation: self.remediation.unwrap_or_default(),
            file,
            line_start,
            line_end,
            confidence,
        };
        finding.refresh_id();
        Ok(finding)
    }
}

#[derive(Serialize)]
struct BlockOut<'a> {
    findings: &'a [FindingRecord],
}

#[derive(Deserialize)]
struct BlockIn {
    findings: Vec<serde_json::Value>,
}

/// Renders records as a complete findings block, delimiters included.
pub fn render_findings_block(records: &[FindingRecord]) -> String {
    let json = serde_json::to_string_pretty(&BlockOut { findings: records }).expect("records serialize");
    alloc::format!("{FINDINGS_OPEN}\n{json}\n{FINDINGS_CLOSE}\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedFindings {
    pub findings: Vec<Finding>,
    pub rejected: Vec<FindingRejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no well-formed findings block in analyzer output")]
pub struct NoFindingsBlock;

/// Locates the first well-formed findings block in `raw` and validates each
/// entry. Invalid entries are dropped individually; only the absence of any
/// well-formed block is an error.
pub fn parse_findings(raw: &str) -> Result<ParsedFindings, NoFindingsBlock> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim() != FINDINGS_OPEN {
            i += 1;
            continue;
        }
        let Some(close) = lines[i + 1..].iter().position(|l| l.trim() == FINDINGS_CLOSE) else {
            break;
        };
        let body = lines[i + 1..i + 1 + close].join("\n");
        if let Ok(block) = serde_json::from_str::<BlockIn>(&body) {
            let mut parsed = ParsedFindings { findings: Vec::new(), rejected: Vec::new() };
            for value in block.findings {
                let outcome = serde_json::from_value::<FindingRecord>(value)
                    .map_err(|_| FindingRejection::WrongShape)
                    .and_then(FindingRecord::validate);
                match outcome {
                    Ok(f) => parsed.findings.push(f),
                    Err(e) => parsed.rejected.push(e),
                }
            }
            return Ok(parsed);
        }
        i += 1;
    }
    Err(NoFindingsBlock)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(severity: &str) -> FindingRecord {
        FindingRecord {
            title: Some("Reentrancy in withdraw".into()),
            class: Some("reentrancy".into()),
            severity: Some(severity.into()),
            description: Some("external call before state update".into()),
            impact: Some("funds drained".into()),
            remediation: Some("checks-effects-interactions".into()),
            file: Some("contracts/Vault.sol".into()),
            line_start: Some(12),
            line_end: Some(14),
            confidence: Some(0.8),
        }
    }

    #[test]
    fn one_valid_finding() {
        let raw = alloc::format!("Here is my analysis.\n{}\nThanks.", render_findings_block(&[record("high")]));
        let parsed = parse_findings(&raw).unwrap();
        assert_eq!(parsed.findings.len(), 1);
        let f = &parsed.findings[0];
        assert_eq!(f.vuln_class, "reentrancy");
        assert_eq!(f.severity, Severity::High);
        assert_eq!(f.location(), "contracts/Vault.sol:12-14");
        assert_eq!(
            f.finding_id,
            Finding::compute_id("reentrancy", "contracts/Vault.sol", 12, 14, "Reentrancy in withdraw")
        );
        assert_eq!(f.finding_id.len(), 16);
    }

    #[test]
    fn empty_block_is_ok() {
        let parsed = parse_findings("===FINDINGS===\n{\"findings\": []}\n===END===\n").unwrap();
        assert!(parsed.findings.is_empty() && parsed.rejected.is_empty());
    }

    #[test]
    fn prose_is_a_parse_failure() {
        assert_eq!(parse_findings("Looks fine to me, no issues."), Err(NoFindingsBlock));
        assert_eq!(parse_findings("===FINDINGS===\n{\"findings\": []}\n"), Err(NoFindingsBlock));
    }

    #[test]
    fn first_well_formed_block_wins() {
        let raw = alloc::format!(
            "===FINDINGS===\nnot json\n===END===\n{}{}",
            render_findings_block(&[record("low")]),
            render_findings_block(&[record("high")])
        );
        let parsed = parse_findings(&raw).unwrap();
        assert_eq!(parsed.findings[0].severity, Severity::Low);
    }

    #[test]
    fn bad_entries_rejected_individually() {
        let mut no_conf = record("MEDIUM");
        no_conf.confidence = None;
        no_conf.line_end = None;
        let mut bad_range = record("low");
        bad_range.line_start = Some(9);
        bad_range.line_end = Some(3);
        let mut bad_conf = record("low");
        bad_conf.confidence = Some(1.5);
        let raw = render_findings_block(&[record("severe"), no_conf, bad_range, bad_conf]);
        let raw = raw.replace("===END===", "").replace("]\n}", ", 42, {\"title\": 7}]\n}") + "===END===\n";
        let parsed = parse_findings(&raw).unwrap();
        assert_eq!(parsed.findings.len(), 1);
        assert_eq!(parsed.findings[0].severity, Severity::Medium);
        assert_eq!(parsed.findings[0].confidence, DEFAULT_CONFIDENCE);
        assert_eq!(parsed.findings[0].line_end, 12);
        assert_eq!(
            parsed.rejected,
            alloc::vec![
                FindingRejection::BadSeverity("severe".into()),
                FindingRejection::BadRange(9, 3),
                FindingRejection::BadConfidence("1.5".into()),
                FindingRejection::WrongShape,
                FindingRejection::WrongShape,
            ]
        );
    }

    #[test]
    fn class_tags_normalize() {
        assert_eq!(normalize_class("Insecure Deserialization"), "insecure_deserialization");
        assert_eq!(normalize_class(" integer-overflow "), "integer_overflow");
        assert_eq!(normalize_class("--"), "");
    }

    #[test]
    fn severity_order() {
        assert!(Severity::Critical > Severity::High && Severity::Low > Severity::Informational);
        assert_eq!(Severity::parse("Critical"), Some(Severity::Critical));
        assert_eq!(Severity::parse("urgent"), None);
    }
}
