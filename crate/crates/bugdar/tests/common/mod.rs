//! Fake GitHub and Slack endpoints served from one local listener.
#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct Seen {
    pub method: &'static str,
    pub path: String,
    pub accept: Option<String>,
    pub authorization: Option<String>,
}

#[derive(Default)]
pub struct FakeState {
    pub diff: Mutex<Option<String>>,
    pub fetch_failures: AtomicUsize,
    pub comment_failures: AtomicUsize,
    pub slack_status: AtomicU64,
    pub requests: Mutex<Vec<Seen>>,
    pub comments: Mutex<Vec<String>>,
    pub slack: Mutex<Vec<String>>,
    next_id: AtomicU64,
}

impl FakeState {
    pub fn comments(&self) -> Vec<String> {
        self.comments.lock().unwrap().clone()
    }

    pub fn slack_texts(&self) -> Vec<String> {
        self.slack.lock().unwrap().clone()
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.requests.lock().unwrap().clone()
    }

    fn record(&self, method: &'static str, path: String, headers: &HeaderMap) {
        let h = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).map(String::from);
        self.requests.lock().unwrap().push(Seen {
            method,
            path,
            accept: h("accept"),
            authorization: h("authorization"),
        });
    }
}

fn take_failure(counter: &AtomicUsize) -> bool {
    counter.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok()
}

async fn pull(
    State(st): State<Arc<FakeState>>,
    Path((owner, name, number)): Path<(String, String, u64)>,
    headers: HeaderMap,
) -> (StatusCode, String) {
    st.record("GET", format!("/repos/{owner}/{name}/pulls/{number}"), &headers);
    if take_failure(&st.fetch_failures) {
        return (StatusCode::BAD_GATEWAY, "upstream hiccup".into());
    }
    match st.diff.lock().unwrap().clone() {
        Some(diff) => (StatusCode::OK, diff),
        None => (StatusCode::NOT_FOUND, r#"{"message":"Not Found"}"#.into()),
    }
}

async fn comment(
    State(st): State<Arc<FakeState>>,
    Path((owner, name, number)): Path<(String, String, u64)>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, String) {
    st.record("POST", format!("/repos/{owner}/{name}/issues/{number}/comments"), &headers);
    if take_failure(&st.comment_failures) {
        return (StatusCode::SERVICE_UNAVAILABLE, "try later".into());
    }
    st.comments.lock().unwrap().push(body["body"].as_str().unwrap_or_default().to_string());
    let id = st.next_id.fetch_add(1, Ordering::SeqCst) + 1000;
    (StatusCode::CREATED, format!(r#"{{"id":{id}}}"#))
}

async fn slack(State(st): State<Arc<FakeState>>, headers: HeaderMap, Json(body): Json<Value>) -> StatusCode {
    st.record("POST", "/slack".into(), &headers);
    st.slack.lock().unwrap().push(body["text"].as_str().unwrap_or_default().to_string());
    StatusCode::from_u16(st.slack_status.load(Ordering::SeqCst) as u16).unwrap_or(StatusCode::OK)
}

pub struct Fake {
    pub base: String,
    pub state: Arc<FakeState>,
}

impl Fake {
    pub fn slack_url(&self) -> String {
        format!("{}/slack", self.base)
    }
}

/// Starts the fake on an ephemeral port of the current runtime.
pub async fn start(diff: Option<&str>) -> Fake {
    let state = Arc::new(FakeState::default());
    *state.diff.lock().unwrap() = diff.map(String::from);
    state.slack_status.store(200, Ordering::SeqCst);
    let app = Router::new()
        .route("/repos/{owner}/{name}/pulls/{number}", get(pull))
        .route("/repos/{owner}/{name}/issues/{number}/comments", post(comment))
        .route("/slack", post(slack))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Fake { base, state }
}

/// A URL on which nothing listens.
pub fn dead_url() -> String {
    let sock = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = sock.local_addr().unwrap();
    drop(sock);
    format!("http://{addr}/slack")
}

pub fn pr(number: u64) -> bugdar_core::diff::PullRequestRef {
    bugdar_core::diff::PullRequestRef {
        repo_owner: "acme".into(),
        repo_name: "vault".into(),
        number,
        head_sha: "a".repeat(40),
        base_sha: "b".repeat(40),
    }
}

pub const REENTRANT_DIFF: &str = concat!(
    "diff --git a/contracts/Bank.sol b/contracts/Bank.sol\n",
    "--- a/contracts/Bank.sol\n",
    "+++ b/contracts/Bank.sol\n",
    "@@ -10,3 +10,5 @@ contract Bank {\n",
    "     function withdraw(uint amount) public {\n",
    "+        (bool ok,) = msg.sender.call{value: amount}(\"\");\n",
    "+        require(ok);\n",
    "         balances[msg.sender] -= amount;\n",
    "     }\n",
);

pub const ANALYZER_A: &str = "mock-rules";
pub const ANALYZER_B: &str = "mock-rules-b";
pub const JUDGE: &str = "judge";
pub const JUDGE_USAGE: (u64, u64) = (40, 1);

pub struct E2e {
    pub pipeline: Arc<bugdar::pipeline::Pipeline>,
    pub steps: Arc<bugdar::pipeline::StepLog>,
    pub store: Arc<bugdar::store::Store>,
    pub ledger: Arc<bugdar::store::LedgerBook>,
    pub fake: Fake,
    pub dir: tempfile::TempDir,
}

/// Two rule-mock analyzers and a scripted judge that always answers "B".
/// Every rate is 1000 micro-credits per thousand tokens, so cost equals
/// tokens.
pub fn settings() -> bugdar::pipeline::PipelineSettings {
    let budget = bugdar_core::chunking::TokenBudget::new(8000, 1000).unwrap();
    let mut s = bugdar::pipeline::PipelineSettings::new(vec![ANALYZER_A.into(), ANALYZER_B.into()], budget);
    s.judge_model = Some(JUDGE.into());
    s
}

pub fn providers() -> bugdar::providers::ProviderRegistry {
    use bugdar::providers::Local;
    use bugdar_core::gateway::{RuleMockProvider, ScriptedProvider, ScriptedReply};
    bugdar::providers::ProviderRegistry::new()
        .with(ANALYZER_A, Local(RuleMockProvider))
        .with(ANALYZER_B, Local(RuleMockProvider))
        .with(
            JUDGE,
            Local(ScriptedProvider::new().with_fallback(ScriptedReply::new("B", JUDGE_USAGE.0, JUDGE_USAGE.1))),
        )
}

pub fn rates() -> bugdar_core::gateway::RateCard {
    bugdar_core::gateway::RateCard::default()
        .with(ANALYZER_A, 1000, 1000)
        .with(ANALYZER_B, 1000, 1000)
        .with(JUDGE, 1000, 1000)
}

pub async fn e2e(diff: &str, slack_url: Option<String>) -> E2e {
    use bugdar::clock::{ManualClock, RecordingSleeper};
    use bugdar::pipeline::{Analyzer, Pipeline, StepLog};
    let fake = start(Some(diff)).await;
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(bugdar::store::Store::open(dir.path()).unwrap());
    let ledger = Arc::new(bugdar::store::LedgerBook::open(&store, 1_000_000, rates()).unwrap());
    let analyzer = Analyzer::new(settings(), Arc::new(providers()), Arc::new(bugdar_core::retrieval::Index::default()));
    let steps = Arc::new(StepLog::default());
    let github = bugdar::github::GitHubClient::new(&fake.base, "tok", Arc::new(RecordingSleeper::default()));
    let mut pipeline =
        Pipeline::new(analyzer, ledger.clone(), store.clone(), Arc::new(ManualClock::new(1_760_000_000_000)))
            .with_code_host(Arc::new(github))
            .with_observer(steps.clone());
    let slack = slack_url.unwrap_or_else(|| fake.slack_url());
    pipeline = pipeline.with_notifier(Arc::new(bugdar::slack::SlackNotifier::new(slack)));
    E2e { pipeline: Arc::new(pipeline), steps, store, ledger, fake, dir }
}

/// Usage the two rule mocks report for each chunk of `diff`, computed by
/// calling the mock directly.
pub fn expected_analyzer_usage(diff: &str) -> u64 {
    use bugdar_core::analysis::{assemble_prompt, PromptOptions, PromptTemplate};
    use bugdar_core::gateway::Provider;
    use bugdar_core::gateway::RuleMockProvider;
    let s = settings();
    let files = bugdar_core::diff::parse_unified_diff(diff).unwrap();
    let chunks = bugdar_core::chunking::partition(&files, s.token_budget).unwrap();
    let mut total = 0;
    for chunk in &chunks {
        for model in &s.analyzers {
            let options = PromptOptions::new(model.clone(), s.token_budget.reserved_tokens);
            let req = assemble_prompt(chunk, &[], &PromptTemplate::default(), &options).unwrap();
            let usage = RuleMockProvider.complete(&req).unwrap().usage;
            total += usage.prompt_tokens + usage.completion_tokens;
        }
    }
    total
}
