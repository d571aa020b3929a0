use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::finding::{Finding, Severity};
use super::judge::SelectionMethod;
use super::CandidateAnalysis;
use crate::diff::PullRequestRef;
use crate::digest::sha256_hex;
use crate::gateway::TokenUsage;

/// Which analyzer's output was kept for a chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkProvenance {
    pub chunk_index: usize,
    /// `None` when every analyzer failed on the chunk.
    pub selected_model: Option<String>,
    pub candidate_count: usize,
    pub selection: Option<SelectionMethod>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkFailure {
    pub chunk_index: usize,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub report_id: String,
    pub pr: PullRequestRef,
    pub findings: Vec<Finding>,
    pub chunk_count: usize,
    pub per_chunk_provenance: Vec<ChunkProvenance>,
    pub usage_total: TokenUsage,
    pub elapsed_ms: u64,
    /// Milliseconds since the Unix epoch.
    pub created_at_ms: u64,
    #[serde(default)]
    pub chunk_failures: Vec<ChunkFailure>,
    /// Set for degenerate inputs, e.g. a diff with nothing to analyze.
    #[serde(default)]
    pub note: Option<String>,
}

impl AnalysisReport {
    pub fn count_by_severity(&self, severity: Severity) -> usize {
        self.findings.iter().filter(|f| f.severity == severity).count()
    }

    pub fn max_severity(&self) -> Option<Severity> {
        self.findings.iter().map(|f| f.severity).max()
    }
}

/// Digest of the PR coordinates, head commit and creation time.
pub fn report_id(pr: &PullRequestRef, created_at_ms: u64) -> String {
    let number = format!("{}", pr.number);
    let created = format!("{created_at_ms}");
    let mut id = sha256_hex(&[
        pr.repo_owner.as_bytes(),
        pr.repo_name.as_bytes(),
        number.as_bytes(),
        pr.head_sha.as_bytes(),
        created.as_bytes(),
    ]);
    id.truncate(24);
    id
}

fn report_order(a: &Finding, b: &Finding) -> Ordering {
    b.severity
        .cmp(&a.severity)
        .then_with(|| a.file.cmp(&b.file))
        .then_with(|| a.line_start.cmp(&b.line_start))
        .then_with(|| a.line_end.cmp(&b.line_end))
        .then_with(|| a.vuln_class.cmp(&b.vuln_class))
        .then_with(|| a.finding_id.cmp(&b.finding_id))
}

/// Severity descending, then path, then start line.
pub fn sort_findings(findings: &mut [Finding]) {
    findings.sort_by(report_order);
}

/// Pools findings from every chunk's selected analysis, merges duplicates
/// and sorts for the report.
///
/// Two findings are duplicates when they share class and file and their
/// line ranges overlap. Of a duplicate group the survivor is the most
/// confident, then the widest range, then the earliest chunk.
pub fn aggregate(selected: &[(usize, CandidateAnalysis)]) -> Vec<Finding> {
    let mut pooled: Vec<(usize, &Finding)> =
        selected.iter().flat_map(|(chunk, c)| c.findings.iter().map(move |f| (*chunk, f))).collect();
    // Stable sort keeps original order as the last tie-breaker.
    pooled.sort_by(|(ca, a), (cb, b)| {
        b.confidence.total_cmp(&a.confidence).then_with(|| b.width().cmp(&a.width())).then_with(|| ca.cmp(cb))
    });
    let mut kept: Vec<Finding> = Vec::new();
    for (_, f) in pooled {
        let duplicate = kept.iter().any(|k| k.vuln_class == f.vuln_class && k.file == f.file && k.overlaps(f));
        if !duplicate {
            kept.push(f.clone());
        }
    }
    sort_findings(&mut kept);
    kept
}

/// `"2 high, 1 low"`, most severe first, zero counts omitted.
pub fn severity_summary(findings: &[Finding]) -> String {
    let parts: Vec<String> = Severity::ALL
        .iter()
        .filter_map(|&s| {
            let n = findings.iter().filter(|f| f.severity == s).count();
            (n > 0).then(|| format!("{n} {s}"))
        })
        .collect();
    parts.join(", ")
}

pub const NO_FINDINGS: &str = "No security findings.";

/// Pull-request summary comment for `report`.
pub fn render_markdown(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let short_sha = report.pr.head_sha.get(..7).unwrap_or(&report.pr.head_sha);
    let _ = writeln!(out, "## Security review for {} at `{short_sha}`\n", report.pr);
    if report.findings.is_empty() {
        let _ = writeln!(out, "{NO_FINDINGS}");
    } else {
        let _ = writeln!(out, "**Findings:** {}", severity_summary(&report.findings));
    }
    let _ = writeln!(out, "\n_Analyzed {} chunk(s)._", report.chunk_count);
    if let Some(note) = &report.note {
        let _ = writeln!(out, "\n_{note}_");
    }
    if !report.chunk_failures.is_empty() {
        let chunks: Vec<String> = report.chunk_failures.iter().map(|f| format!("{}", f.chunk_index)).collect();
        let _ = writeln!(out, "\n**Warning:** analysis failed for chunk(s) {}.", chunks.join(", "));
    }
    for (i, f) in report.findings.iter().enumerate() {
        let badge = f.severity.as_str().to_ascii_uppercase();
        let _ = writeln!(out, "\n### {}. [{badge}] {}\n", i + 1, f.title);
        let _ = writeln!(out, "- **Class:** `{}`", f.vuln_class);
        let _ = writeln!(out, "- **Severity:** {badge}");
        let _ = writeln!(out, "- **Location:** `{}`", f.location());
        let _ = writeln!(out, "- **Confidence:** {:.2}", f.confidence);
        let _ = writeln!(out, "\n**Description:** {}", f.description);
        let _ = writeln!(out, "\n**Impact:** {}", f.impact);
        let _ = writeln!(out, "\n**Remediation:** {}", f.remediation);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const SHA: &str = "89abcdef0123456789abcdef0123456789abcdef";

    fn finding(class: &str, file: &str, start: u64, end: u64, severity: Severity, confidence: f64) -> Finding {
        let mut f = Finding {
            finding_id: String::new(),
            title: format!("{class} issue"),
            vuln_class: class.into(),
            severity,
            description: "d".into(),
            impact: "i".into(),
            remediation: "r".into(),
            file: file.into(),
            line_start: start,
            line_end: end,
            confidence,
        };
        f.refresh_id();
        f
    }

    fn cand(findings: Vec<Finding>) -> CandidateAnalysis {
        CandidateAnalysis {
            analyzer_model_id: "m".into(),
            raw_text: String::new(),
            findings,
            parse_ok: true,
            rejected: 0,
            error: None,
        }
    }

    fn report(findings: Vec<Finding>) -> AnalysisReport {
        let pr = PullRequestRef::new("acme", "vault", 7, SHA, SHA).unwrap();
        AnalysisReport {
            report_id: report_id(&pr, 1),
            pr,
            findings,
            chunk_count: 1,
            per_chunk_provenance: vec![],
            usage_total: TokenUsage::default(),
            elapsed_ms: 0,
            created_at_ms: 1,
            chunk_failures: vec![],
            note: None,
        }
    }

    #[test]
    fn aggregate_nothing() {
        assert!(aggregate(&[]).is_empty());
        assert!(aggregate(&[(0, cand(vec![]))]).is_empty());
    }

    #[test]
    fn overlapping_slices_dedupe_to_one() {
        let a = finding("reentrancy", "V.sol", 10, 12, Severity::High, 0.9);
        let b = finding("reentrancy", "V.sol", 12, 12, Severity::High, 0.9);
        let out = aggregate(&[(0, cand(vec![a.clone()])), (1, cand(vec![b]))]);
        assert_eq!(out, vec![a]);
    }

    #[test]
    fn dedupe_prefers_confidence_then_width_then_chunk() {
        let low = finding("x", "f", 1, 9, Severity::Low, 0.4);
        let high = finding("x", "f", 5, 5, Severity::Low, 0.8);
        assert_eq!(aggregate(&[(0, cand(vec![low.clone(), high.clone()]))]), vec![high]);

        let narrow = finding("x", "f", 5, 5, Severity::Low, 0.5);
        let wide = finding("x", "f", 4, 6, Severity::Low, 0.5);
        assert_eq!(aggregate(&[(0, cand(vec![narrow.clone()])), (1, cand(vec![wide.clone()]))]), vec![wide]);

        let mut later = narrow.clone();
        later.title = "later".into();
        later.refresh_id();
        assert_eq!(aggregate(&[(3, cand(vec![later])), (1, cand(vec![narrow.clone()]))]), vec![narrow]);
    }

    #[test]
    fn distinct_class_or_file_or_range_survive() {
        let fs = vec![
            finding("x", "f", 1, 2, Severity::Low, 0.5),
            finding("y", "f", 1, 2, Severity::Low, 0.5),
            finding("x", "g", 1, 2, Severity::Low, 0.5),
            finding("x", "f", 3, 4, Severity::Low, 0.5),
        ];
        assert_eq!(aggregate(&[(0, cand(fs))]).len(), 4);
    }

    #[test]
    fn severity_major_sort() {
        let low = finding("a", "a.rs", 1, 1, Severity::Low, 0.5);
        let crit = finding("b", "b.rs", 9, 9, Severity::Critical, 0.5);
        let out = aggregate(&[(0, cand(vec![low.clone(), crit.clone()]))]);
        assert_eq!(out, vec![crit, low]);
    }

    #[test]
    fn markdown_zero_findings() {
        let md = render_markdown(&report(vec![]));
        assert!(md.contains(NO_FINDINGS));
        assert!(md.starts_with("## Security review for acme/vault#7 at `89abcde`"));
    }

    #[test]
    fn markdown_counts_sections_and_location() {
        let findings = vec![
            finding("reentrancy", "V.sol", 7, 7, Severity::High, 0.9),
            finding("unsafe_block", "b.rs", 2, 4, Severity::Low, 0.5),
        ];
        let md = render_markdown(&report(findings));
        assert!(md.contains("**Findings:** 1 high, 1 low\n"));
        let first = md.find("### 1. [HIGH] reentrancy issue").unwrap();
        let second = md.find("### 2. [LOW] unsafe_block issue").unwrap();
        assert!(first < second);
        assert!(md.contains("- **Location:** `V.sol:7-7`"));
        assert_eq!(
            md,
            render_markdown(&report(vec![
                finding("reentrancy", "V.sol", 7, 7, Severity::High, 0.9),
                finding("unsafe_block", "b.rs", 2, 4, Severity::Low, 0.5),
            ]))
        );
    }

    #[test]
    fn report_ids_depend_on_time() {
        let pr = PullRequestRef::new("o", "r", 1, SHA, SHA).unwrap();
        assert_ne!(report_id(&pr, 1), report_id(&pr, 2));
        assert_eq!(report_id(&pr, 1), report_id(&pr, 1));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn finding_strategy() -> impl Strategy<Value = (usize, Finding)> {
            (
                0usize..4,
                prop_oneof![Just("reentrancy"), Just("overflow"), Just("access_control")],
                prop_oneof![Just("a.sol"), Just("b.rs")],
                1u64..30,
                0u64..4,
                0usize..5,
                0u32..=10,
            )
                .prop_map(|(chunk, class, file, start, width, sev, conf)| {
                    (chunk, finding(class, file, start, start + width, Severity::ALL[sev], conf as f64 / 10.0))
                })
        }

        fn group(items: Vec<(usize, Finding)>) -> Vec<(usize, CandidateAnalysis)> {
            items.into_iter().map(|(c, f)| (c, cand(vec![f]))).collect()
        }

        proptest! {
            #[test]
            fn aggregation_is_idempotent(items in proptest::collection::vec(finding_strategy(), 0..30)) {
                let once = aggregate(&group(items));
                let twice = aggregate(&[(0, cand(once.clone()))]);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn unique_class_file_pairs_survive(items in proptest::collection::vec(finding_strategy(), 0..30)) {
                let out = aggregate(&group(items.clone()));
                for (_, f) in &items {
                    let same = items.iter().filter(|(_, g)| g.vuln_class == f.vuln_class && g.file == f.file).count();
                    if same == 1 {
                        prop_assert!(out.contains(f));
                    }
                }
                for w in out.windows(2) {
                    prop_assert!(report_order(&w[0], &w[1]) != Ordering::Greater);
                }
            }
        }
    }
}
