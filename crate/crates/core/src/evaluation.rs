//! Ground-truth matching, precision/recall/F1/accuracy, published-table
//! consistency checks and throughput arithmetic.
//!
//! Accuracy is `tp / (tp + fp + fn)`. With `P = tp/(tp+fp)` and
//! `R = tp/(tp+fn)` this equals `1 / (1/P + 1/R - 1)`, which is what
//! [`table_consistency_check`] tests rows against.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Finding;
use crate::diff::Language;
use crate::retrieval::tokenize;

pub const DEFAULT_DESCRIPTION_THRESHOLD: f64 = 0.5;
pub const STOP_WORDS: [&str; 7] = ["a", "an", "the", "of", "in", "to", "is"];
pub const F1_TOLERANCE: f64 = 0.01;
pub const ACCURACY_TOLERANCE: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Description,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Classification, Task::Description];

    pub fn label(self) -> &'static str {
        match self {
            Task::Classification => "Classification",
            Task::Description => "Description",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    ManualAudit,
    BugBounty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthFinding {
    #[serde(rename = "class")]
    pub vuln_class: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub sample_id: String,
    pub language_hint: Language,
    pub diff_or_code: String,
    pub truth_findings: Vec<TruthFinding>,
    pub source: SampleSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub task: Task,
}

impl MatchCounts {
    pub fn zero(task: Task) -> Self {
        MatchCounts { tp: 0, fp: 0, fn_: 0, task }
    }

    pub fn new(tp: u64, fp: u64, fn_: u64, task: Task) -> Self {
        MatchCounts { tp, fp, fn_, task }
    }
}

impl Add for MatchCounts {
    type Output = MatchCounts;

    /// Componentwise sum; both sides must describe the same task.
    fn add(self, rhs: MatchCounts) -> MatchCounts {
        assert_eq!(self.task, rhs.task, "pooling counts across tasks");
        MatchCounts::new(self.tp + rhs.tp, self.fp + rhs.fp, self.fn_ + rhs.fn_, self.task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub description_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { description_threshold: DEFAULT_DESCRIPTION_THRESHOLD }
    }
}

/// Lowercased description tokens minus the stop set.
pub fn description_tokens(text: &str) -> BTreeSet<String> {
    tokenize(text).filter(|t| !STOP_WORDS.contains(&t.as_str())).collect()
}

/// Jaccard similarity of two token sets; zero when both are empty.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let (a, b) = (description_tokens(a), description_tokens(b));
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// A class/description pair from either side of a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Labeled<'a> {
    pub class: &'a str,
    pub description: &'a str,
}

impl<'a> From<&'a Finding> for Labeled<'a> {
    fn from(f: &'a Finding) -> Self {
        Labeled { class: &f.vuln_class, description: &f.description }
    }
}

impl<'a> From<&'a TruthFinding> for Labeled<'a> {
    fn from(t: &'a TruthFinding) -> Self {
        Labeled { class: &t.vuln_class, description: &t.description }
    }
}

/// Greedy one-to-one matching: each prediction, in order, takes the first
/// still-unmatched truth item it matches.
pub fn match_labeled(
    predicted: &[Labeled<'_>],
    truth: &[Labeled<'_>],
    task: Task,
    config: &MatchConfig,
) -> MatchCounts {
    let mut used = alloc::vec![false; truth.len()];
    let mut tp = 0;
    for p in predicted {
        let hit = truth.iter().enumerate().position(|(i, t)| {
            !used[i]
                && match task {
                    Task::Classification => p.class == t.class,
                    Task::Description => token_jaccard(p.description, t.description) >= config.description_threshold,
                }
        });
        if let Some(i) = hit {
            used[i] = true;
            tp += 1;
        }
    }
    MatchCounts::new(tp, predicted.len() as u64 - tp, truth.len() as u64 - tp, task)
}

pub fn match_findings(predicted: &[Finding], truth: &[TruthFinding], task: Task, config: &MatchConfig) -> MatchCounts {
    let p: Vec<Labeled<'_>> = predicted.iter().map(Labeled::from).collect();
    let t: Vec<Labeled<'_>> = truth.iter().map(Labeled::from).collect();
    match_labeled(&p, &t, task, config)
}

fn ratio_or_degenerate(tp: u64, other: u64, opposite_misses: u64) -> f64 {
    if tp + other == 0 {
        // Nothing predicted (for precision) or nothing to find (for recall):
        // perfect only if the other side is empty as well.
        if opposite_misses == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + other) as f64
    }
}

pub fn compute_metrics(counts: &MatchCounts) -> Metrics {
    let MatchCounts { tp, fp, fn_, .. } = *counts;
    let precision = ratio_or_degenerate(tp, fp, fn_);
    let recall = ratio_or_degenerate(tp, fn_, fp);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let denom = tp + fp + fn_;
    let accuracy = if denom == 0 { 1.0 } else { tp as f64 / denom as f64 };
    Metrics { precision, recall, f1, accuracy }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl TableRow {
    pub fn new(precision: f64, recall: f64, f1: f64, accuracy: f64) -> Self {
        TableRow { precision, recall, f1, accuracy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowDeviation {
    pub expected_f1: f64,
    pub expected_accuracy: f64,
    pub f1_deviation: f64,
    pub accuracy_deviation: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("row {0}: precision and recall must lie in (0, 1]")]
    RowOutOfRange(usize),
    #[error("elapsed time must be positive, got {0}")]
    NonPositiveElapsed(f64),
    #[error("pull request count must be at least 1")]
    ZeroPrCount,
}

/// Checks each row's F1 and accuracy against the values implied by its
/// precision and recall.
pub fn table_consistency_check(
    rows: &[TableRow],
    f1_tolerance: f64,
    accuracy_tolerance: f64,
) -> Result<Vec<RowDeviation>, EvalError> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let (p, r) = (row.precision, row.recall);
            if !(p > 0.0 && p <= 1.0 && r > 0.0 && r <= 1.0) {
                return Err(EvalError::RowOutOfRange(i));
            }
            let expected_f1 = 2.0 * p * r / (p + r);
            let expected_accuracy = 1.0 / (1.0 / p + 1.0 / r - 1.0);
            let f1_deviation = libm::fabs(row.f1 - expected_f1);
            let accuracy_deviation = libm::fabs(row.accuracy - expected_accuracy);
            Ok(RowDeviation {
                expected_f1,
                expected_accuracy,
                f1_deviation,
                accuracy_deviation,
                flagged: f1_deviation > f1_tolerance || accuracy_deviation > accuracy_tolerance,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputStats {
    pub lines_changed: u64,
    pub pr_count: u64,
    pub elapsed_seconds: f64,
    pub lines_per_second: f64,
    pub seconds_per_pr: f64,
}

pub fn compute_throughput(
    lines_changed: u64,
    pr_count: u64,
    elapsed_seconds: f64,
) -> Result<ThroughputStats, EvalError> {
    if elapsed_seconds.is_nan() || elapsed_seconds <= 0.0 {
        return Err(EvalError::NonPositiveElapsed(elapsed_seconds));
    }
    if pr_count == 0 {
        return Err(EvalError::ZeroPrCount);
    }
    Ok(ThroughputStats {
        lines_changed,
        pr_count,
        elapsed_seconds,
        lines_per_second: lines_changed as f64 / elapsed_seconds,
        seconds_per_pr: elapsed_seconds / pr_count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cls(class: &str) -> Labeled<'_> {
        Labeled { class, description: "" }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        libm::fabs(a - b) <= tol
    }

    #[test]
    fn matching_examples() {
        let cfg = MatchConfig::default();
        assert_eq!(match_labeled(&[], &[], Task::Classification, &cfg), MatchCounts::zero(Task::Classification));
        assert_eq!(
            match_labeled(&[cls("reentrancy")], &[cls("reentrancy")], Task::Classification, &cfg),
            MatchCounts::new(1, 0, 0, Task::Classification)
        );
        assert_eq!(
            match_labeled(
                &[cls("reentrancy"), cls("overflow")],
                &[cls("reentrancy"), cls("access_control")],
                Task::Classification,
                &cfg
            ),
            MatchCounts::new(1, 1, 1, Task::Classification)
        );
    }

    #[test]
    fn duplicate_predictions_match_once() {
        let cfg = MatchConfig::default();
        let counts = match_labeled(&[cls("x"), cls("x")], &[cls("x")], Task::Classification, &cfg);
        assert_eq!(counts, MatchCounts::new(1, 1, 0, Task::Classification));
    }

    #[test]
    fn description_matching_uses_jaccard() {
        // {external, call, before, state, update} vs {external, call, before, balance, update}
        assert!(close(
            token_jaccard("An external call before the state update", "external call before balance update"),
            4.0 / 6.0,
            1e-12
        ));
        assert_eq!(token_jaccard("the of a", "in to is"), 0.0);
        let p = Labeled { class: "x", description: "Pickle loads untrusted data" };
        let t = Labeled { class: "y", description: "untrusted data passed to pickle loads" };
        let counts = match_labeled(&[p], &[t], Task::Description, &MatchConfig::default());
        assert_eq!(counts.tp, 1);
        let strict = MatchConfig { description_threshold: 0.95 };
        assert_eq!(match_labeled(&[p], &[t], Task::Description, &strict).tp, 0);
    }

    #[test]
    fn metrics_examples() {
        let m = compute_metrics(&MatchCounts::new(21, 39, 14, Task::Classification));
        assert!(close(m.precision, 0.35, 1e-12));
        assert!(close(m.recall, 0.60, 1e-12));
        assert!(close(m.f1, 0.442, 0.0005));
        assert!(close(m.accuracy, 0.284, 0.0005));

        let m = compute_metrics(&MatchCounts::new(7, 0, 0, Task::Description));
        assert_eq!(m, Metrics { precision: 1.0, recall: 1.0, f1: 1.0, accuracy: 1.0 });
        let m = compute_metrics(&MatchCounts::new(0, 0, 5, Task::Description));
        assert_eq!(m, Metrics { precision: 0.0, recall: 0.0, f1: 0.0, accuracy: 0.0 });
        let m = compute_metrics(&MatchCounts::new(0, 3, 0, Task::Description));
        assert_eq!(m, Metrics { precision: 0.0, recall: 0.0, f1: 0.0, accuracy: 0.0 });
        let m = compute_metrics(&MatchCounts::zero(Task::Classification));
        assert_eq!(m, Metrics { precision: 1.0, recall: 1.0, f1: 1.0, accuracy: 1.0 });
    }

    #[test]
    fn table_rows() {
        let rows = [
            TableRow::new(0.35, 0.60, 0.44, 0.29),
            TableRow::new(0.50, 0.67, 0.57, 0.40),
            TableRow::new(0.5, 0.5, 0.9, 0.9),
        ];
        let out = table_consistency_check(&rows, F1_TOLERANCE, ACCURACY_TOLERANCE).unwrap();
        assert!(out[0].f1_deviation <= 0.01 && out[0].accuracy_deviation <= 0.015 && !out[0].flagged);
        assert!(close(out[0].expected_accuracy, 0.284, 0.0005));
        assert!(!out[1].flagged);
        assert!(out[2].flagged && out[2].f1_deviation > 0.01 && out[2].accuracy_deviation > 0.015);
        assert_eq!(
            table_consistency_check(&[TableRow::new(0.0, 0.5, 0.0, 0.0)], 0.01, 0.015),
            Err(EvalError::RowOutOfRange(0))
        );
    }

    #[test]
    fn throughput_examples() {
        let t = compute_throughput(23_644, 14, 790.0).unwrap();
        assert!(close(t.lines_per_second, 29.93, 0.005));
        assert!(close(t.seconds_per_pr, 56.43, 0.005));
        let t = compute_throughput(0, 1, 10.0).unwrap();
        assert_eq!((t.lines_per_second, t.seconds_per_pr), (0.0, 10.0));
        let t = compute_throughput(100, 4, 50.0).unwrap();
        assert_eq!((t.lines_per_second, t.seconds_per_pr), (2.0, 12.5));
        assert_eq!(compute_throughput(1, 1, 0.0), Err(EvalError::NonPositiveElapsed(0.0)));
        assert_eq!(compute_throughput(1, 0, 1.0), Err(EvalError::ZeroPrCount));
    }

    #[test]
    fn truth_serializes_with_class_key() {
        let t: TruthFinding = serde_json::from_str(r#"{"class":"reentrancy","description":"d"}"#).unwrap();
        assert_eq!(t.vuln_class, "reentrancy");
        let c = MatchCounts::new(1, 2, 3, Task::Description);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"fn\":3"));
        assert_eq!(c + c, MatchCounts::new(2, 4, 6, Task::Description));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn classes() -> impl Strategy<Value = Vec<String>> {
            proptest::collection::vec(
                prop_oneof![Just("a"), Just("b"), Just("c"), Just("d")].prop_map(String::from),
                0..12,
            )
        }

        fn labeled(v: &[String]) -> Vec<Labeled<'_>> {
            v.iter().map(|c| Labeled { class: c, description: c }).collect()
        }

        proptest! {
            #[test]
            fn swapping_sides_swaps_fp_and_fn(p in classes(), t in classes()) {
                let cfg = MatchConfig::default();
                let fwd = match_labeled(&labeled(&p), &labeled(&t), Task::Classification, &cfg);
                let back = match_labeled(&labeled(&t), &labeled(&p), Task::Classification, &cfg);
                prop_assert_eq!((fwd.tp, fwd.fp, fwd.fn_), (back.tp, back.fn_, back.fp));
            }

            #[test]
            fn tp_bounded_by_smaller_side(p in classes(), t in classes(), task in prop_oneof![Just(Task::Classification), Just(Task::Description)]) {
                let c = match_labeled(&labeled(&p), &labeled(&t), task, &MatchConfig::default());
                prop_assert!(c.tp <= p.len().min(t.len()) as u64);
                prop_assert_eq!(c.tp + c.fp, p.len() as u64);
                prop_assert_eq!(c.tp + c.fn_, t.len() as u64);
            }

            #[test]
            fn metrics_in_unit_interval(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
                let m = compute_metrics(&MatchCounts::new(tp, fp, fn_, Task::Classification));
                for v in [m.precision, m.recall, m.f1, m.accuracy] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                if m.precision > 0.0 && m.recall > 0.0 {
                    prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-12);
                    prop_assert!((m.accuracy - 1.0 / (1.0 / m.precision + 1.0 / m.recall - 1.0)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pooled_counts_equal_summed_counts() {
        let parts = [
            MatchCounts::new(2, 1, 0, Task::Classification),
            MatchCounts::new(0, 0, 3, Task::Classification),
            MatchCounts::new(4, 2, 1, Task::Classification),
        ];
        let pooled = parts.iter().copied().fold(MatchCounts::zero(Task::Classification), Add::add);
        assert_eq!(pooled, MatchCounts::new(6, 3, 4, Task::Classification));
    }
}
