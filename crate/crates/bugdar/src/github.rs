//! GitHub REST calls: fetch a pull request's diff, post summary comments.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use bugdar_core::diff::PullRequestRef;
use bugdar_core::webhook::{split_comment, MAX_COMMENT_CHARS};
use reqwest::header::{ACCEPT, USER_AGENT};
use reqwest::StatusCode;
use serde::Deserialize;
use thiserror::Error;

use crate::clock::Sleeper;
use crate::retry::with_retries;

pub const DIFF_MEDIA_TYPE: &str = "application/vnd.github.diff";
pub const JSON_MEDIA_TYPE: &str = "application/vnd.github+json";
const AGENT: &str = concat!("bugdar/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct CommentId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GitHubError {
    #[error("pull request {0} not found")]
    UnknownPr(String),
    #[error("resource not found: {0}")]
    NotFound(String),
    #[error("GitHub rejected the credentials (status {0})")]
    Auth(u16),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unexpected status {status}: {detail}")]
    Status { status: u16, detail: String },
    #[error("comment body must not be empty")]
    EmptyBody,
}

impl GitHubError {
    fn retryable(&self) -> bool {
        matches!(self, GitHubError::Transport(_))
    }
}

/// Where diffs come from and summaries go.
#[async_trait]
pub trait CodeHost: Send + Sync {
    async fn fetch_pr_diff(&self, pr: &PullRequestRef) -> Result<String, GitHubError>;
    async fn post_comment(&self, pr: &PullRequestRef, body: &str) -> Result<Vec<CommentId>, GitHubError>;
}

pub struct GitHubClient {
    http: reqwest::Client,
    api_base: String,
    token: String,
    sleeper: Arc<dyn Sleeper>,
}

impl GitHubClient {
    pub fn new(api_base: impl Into<String>, token: impl Into<String>, sleeper: Arc<dyn Sleeper>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("reqwest client builds with static settings");
        GitHubClient { http, api_base: api_base.into().trim_end_matches('/').to_string(), token: token.into(), sleeper }
    }

    fn classify(status: StatusCode, body: &str, not_found: impl FnOnce() -> GitHubError) -> GitHubError {
        match status.as_u16() {
            401 | 403 => GitHubError::Auth(status.as_u16()),
            404 => not_found(),
            s if status.is_server_error() => GitHubError::Transport(format!("status {s}")),
            s => GitHubError::Status { status: s, detail: body.chars().take(200).collect() },
        }
    }

    async fn fetch_once(&self, pr: &PullRequestRef) -> Result<String, GitHubError> {
        let url = format!("{}/repos/{}/{}/pulls/{}", self.api_base, pr.repo_owner, pr.repo_name, pr.number);
        let resp = self
            .http
            .get(url)
            .bearer_auth(&self.token)
            .header(ACCEPT, DIFF_MEDIA_TYPE)
            .header(USER_AGENT, AGENT)
            .send()
            .await
            .map_err(|e| GitHubError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().await.map_err(|e| GitHubError::Transport(e.to_string()))?;
        if status.is_success() {
            Ok(body)
        } else {
            Err(Self::classify(status, &body, || GitHubError::UnknownPr(pr.to_string())))
        }
    }

    async fn post_once(&self, pr: &PullRequestRef, body: &str) -> Result<CommentId, GitHubError> {
        #[derive(Deserialize)]
        struct Created {
            id: u64,
        }
        let url = format!("{}/repos/{}/{}/issues/{}/comments", self.api_base, pr.repo_owner, pr.repo_name, pr.number);
        let resp = self
            .http
            .post(url)
            .bearer_auth(&self.token)
            .header(ACCEPT, JSON_MEDIA_TYPE)
            .header(USER_AGENT, AGENT)
            .json(&serde_json::json!({ "body": body }))
            .send()
            .await
            .map_err(|e| GitHubError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| GitHubError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Self::classify(status, &text, || GitHubError::NotFound(pr.to_string())));
        }
        let created: Created = serde_json::from_str(&text)
            .map_err(|e| GitHubError::Status { status: status.as_u16(), detail: e.to_string() })?;
        Ok(CommentId(created.id))
    }
}

#[async_trait]
impl CodeHost for GitHubClient {
    async fn fetch_pr_diff(&self, pr: &PullRequestRef) -> Result<String, GitHubError> {
        with_retries(self.sleeper.as_ref(), || self.fetch_once(pr), GitHubError::retryable).await
    }

    /// Posts `body`, split into numbered parts when it exceeds the comment
    /// size limit.
    async fn post_comment(&self, pr: &PullRequestRef, body: &str) -> Result<Vec<CommentId>, GitHubError> {
        if body.is_empty() {
            return Err(GitHubError::EmptyBody);
        }
        let mut ids = Vec::new();
        for part in split_comment(body, MAX_COMMENT_CHARS) {
            ids.push(with_retries(self.sleeper.as_ref(), || self.post_once(pr, &part), GitHubError::retryable).await?);
        }
        Ok(ids)
    }
}
