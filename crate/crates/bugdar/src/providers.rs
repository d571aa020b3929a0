//! Async chat providers: in-process mocks and OpenAI-compatible remotes,
//! routed by model id.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use bugdar_core::gateway::{ChatRequest, ChatResponse, GatewayError, Provider, TokenUsage};
use serde::Deserialize;
use serde_json::json;

use crate::clock::Sleeper;
use crate::retry::with_retries;

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Runs a synchronous core provider in place.
#[derive(Debug, Clone, Default)]
pub struct Local<P>(pub P);

#[async_trait]
impl<P: Provider + Send + Sync> ChatProvider for Local<P> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.0.complete(request)
    }
}

#[async_trait]
impl<T: ChatProvider + ?Sized> ChatProvider for Arc<T> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request).await
    }
}

/// Dispatches each request to the provider registered for its model id.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    providers: BTreeMap<String, Arc<dyn ChatProvider>>,
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, model_id: impl Into<String>, provider: impl ChatProvider + 'static) -> Self {
        self.insert(model_id, provider);
        self
    }

    pub fn insert(&mut self, model_id: impl Into<String>, provider: impl ChatProvider + 'static) {
        self.providers.insert(model_id.into(), Arc::new(provider));
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.providers.contains_key(model_id)
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }
}

#[async_trait]
impl ChatProvider for ProviderRegistry {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let provider = self
            .providers
            .get(&request.model_id)
            .ok_or_else(|| GatewayError::UnknownModel(request.model_id.clone()))?;
        provider.complete(request).await
    }
}

/// Client for `POST {base_url}/chat/completions` style endpoints.
pub struct RemoteProvider {
    http: reqwest::Client,
    base_url: String,
    api_key: String,
    sleeper: Arc<dyn Sleeper>,
}

impl RemoteProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, sleeper: Arc<dyn Sleeper>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .expect("reqwest client builds with static settings");
        RemoteProvider {
            http,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            sleeper,
        }
    }

    async fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = json!({
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "max_tokens": request.max_response_tokens,
            "temperature": request.temperature,
        });
        let started = Instant::now();
        let resp = self
            .http
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(GatewayError::Authentication(format!("status {status}")));
        }
        if text.contains("context_length_exceeded") {
            return Err(GatewayError::ContextLengthExceeded(status.to_string()));
        }
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(GatewayError::Transport(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(GatewayError::BadResponse(format!("status {status}: {}", truncate(&text, 200))));
        }
        let parsed: CompletionBody =
            serde_json::from_str(&text).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::BadResponse("no choices in response".into()))?;
        let usage =
            parsed.usage.map_or_else(TokenUsage::default, |u| TokenUsage::new(u.prompt_tokens, u.completion_tokens));
        Ok(ChatResponse {
            text: content,
            usage,
            model_id: request.model_id.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[async_trait]
impl ChatProvider for RemoteProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        with_retries(self.sleeper.as_ref(), || self.attempt(request), GatewayError::is_retryable).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bugdar_core::gateway::{RuleMockProvider, ScriptedProvider, ScriptedReply};

    #[tokio::test]
    async fn registry_routes_by_model() {
        let req = ChatRequest::new("judge", "s", "u").unwrap();
        let registry = ProviderRegistry::new()
            .with("mock-rules", Local(RuleMockProvider))
            .with("judge", Local(ScriptedProvider::new().with_reply(&req, ScriptedReply::new("R", 3, 1))));
        let resp = registry.complete(&req).await.unwrap();
        assert_eq!((resp.text.as_str(), resp.usage), ("R", TokenUsage::new(3, 1)));
        let other = ChatRequest::new("nope", "s", "u").unwrap();
        assert_eq!(registry.complete(&other).await, Err(GatewayError::UnknownModel("nope".into())));
    }

    #[tokio::test]
    async fn scripted_provider_is_referentially_transparent() {
        let req = ChatRequest::new("m", "s", "u").unwrap();
        let p = Local(ScriptedProvider::new().with_reply(&req, ScriptedReply::new("same", 1, 1)));
        assert_eq!(p.complete(&req).await, p.complete(&req).await);
    }
}
