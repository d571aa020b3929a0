mod common;

use bugdar::pipeline::{Step, EMPTY_DIFF_NOTE};
use bugdar::slack::Delivery;
use bugdar_core::analysis::{render_markdown, SelectionMethod, Severity};

use common::{e2e, expected_analyzer_usage, pr, ANALYZER_A, ANALYZER_B, JUDGE_USAGE, REENTRANT_DIFF};

#[tokio::test]
async fn opened_pr_runs_every_step_in_order() {
    let run = e2e(REENTRANT_DIFF, None).await;
    let outcome = run.pipeline.run_pipeline(&pr(42)).await.unwrap();

    assert_eq!(
        run.steps.steps(),
        vec![
            Step::Fetch,
            Step::Partition { chunks: 1 },
            Step::Analyze { chunk: 0, model: ANALYZER_A.into() },
            Step::Analyze { chunk: 0, model: ANALYZER_B.into() },
            Step::Judge { chunk: 0 },
            Step::Aggregate,
            Step::Debit,
            Step::Persist,
            Step::Comment,
            Step::Notify,
        ]
    );

    let report = &outcome.report;
    assert_eq!(report.findings.len(), 1);
    assert_eq!(report.findings[0].vuln_class, "reentrancy");
    assert_eq!(report.findings[0].severity, Severity::High);
    assert_eq!((report.findings[0].file.as_str(), report.findings[0].line_start), ("contracts/Bank.sol", 11));
    let prov = &report.per_chunk_provenance[0];
    assert_eq!(prov.selected_model.as_deref(), Some(ANALYZER_B));
    assert_eq!(prov.selection, Some(SelectionMethod::Judge));
    assert_eq!(prov.candidate_count, 2);

    let expected = expected_analyzer_usage(REENTRANT_DIFF) + JUDGE_USAGE.0 + JUDGE_USAGE.1;
    assert_eq!(report.usage_total.prompt_tokens + report.usage_total.completion_tokens, expected);
    assert_eq!(1_000_000 - run.ledger.balance(), expected);
    assert_eq!(outcome.ledger_entries.len(), 3);

    let stored = run.store.load(&report.report_id).unwrap();
    assert_eq!(&stored, report);
    assert_eq!(run.fake.state.comments(), vec![render_markdown(report)]);
    assert_eq!(run.fake.state.slack_texts().len(), 1);
    assert!(run.fake.state.slack_texts()[0].contains("1 high"));
    assert_eq!(outcome.notification, Some(Delivery::Delivered));
}

#[tokio::test]
async fn ledger_file_matches_memory() {
    let run = e2e(REENTRANT_DIFF, None).await;
    run.pipeline.run_pipeline(&pr(1)).await.unwrap();
    run.pipeline.run_pipeline(&pr(2)).await.unwrap();
    let stored = run.store.read_ledger(1_000_000).unwrap();
    assert_eq!(stored.entries, run.ledger.snapshot().entries);
    assert_eq!(stored.verify().unwrap().balance, run.ledger.balance());
}

#[tokio::test]
async fn unreachable_slack_does_not_fail_the_run() {
    let run = e2e(REENTRANT_DIFF, Some(common::dead_url())).await;
    let outcome = run.pipeline.run_pipeline(&pr(5)).await.unwrap();
    assert!(matches!(outcome.notification, Some(Delivery::Failed(_))));
    assert_eq!(run.fake.state.comments().len(), 1);
    assert!(run.store.load(&outcome.report.report_id).is_ok());
}

#[tokio::test]
async fn binary_only_diff_reports_no_findings_and_costs_nothing() {
    let diff = "diff --git a/logo.png b/logo.png\nindex 1111111..2222222 100644\nBinary files a/logo.png and b/logo.png differ\n";
    let run = e2e(diff, None).await;
    let outcome = run.pipeline.run_pipeline(&pr(8)).await.unwrap();
    assert!(outcome.report.findings.is_empty());
    assert_eq!(outcome.report.chunk_count, 1);
    assert_eq!(outcome.report.note.as_deref(), Some(EMPTY_DIFF_NOTE));
    assert_eq!(run.ledger.balance(), 1_000_000);
    assert!(run.fake.state.comments()[0].contains("No security findings."));
}

#[tokio::test]
async fn missing_pr_stops_before_analysis() {
    let run = e2e(REENTRANT_DIFF, None).await;
    *run.fake.state.diff.lock().unwrap() = None;
    assert!(run.pipeline.run_pipeline(&pr(9)).await.is_err());
    assert!(run.steps.steps().is_empty());
    assert!(run.store.reports().unwrap().is_empty());
    assert_eq!(run.ledger.balance(), 1_000_000);
}

#[tokio::test]
async fn failed_comment_is_not_fatal() {
    let run = e2e(REENTRANT_DIFF, None).await;
    run.fake.state.comment_failures.store(10, std::sync::atomic::Ordering::SeqCst);
    let outcome = run.pipeline.run_pipeline(&pr(3)).await.unwrap();
    assert!(matches!(outcome.comment, Some(Err(_))));
    assert_eq!(outcome.notification, Some(Delivery::Delivered));
}
