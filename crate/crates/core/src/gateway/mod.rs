//! Chat-completion request/response types, the provider trait implemented by
//! the in-tree mocks, and credit accounting.

mod ledger;
mod mock;

use alloc::string::String;
use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{cost_of, CreditLedger, LedgerEntry, LedgerError, ModelRate, RateCard};
pub use mock::{rule_mock_analyze, RuleMockProvider, ScriptedProvider, ScriptedReply, RULE_MOCK_MODEL};

use crate::chunking::estimate_tokens;
use crate::digest::sha256_hex;

pub const DEFAULT_MAX_RESPONSE_TOKENS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_response_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(
        model_id: impl Into<String>,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        let request = ChatRequest {
            model_id: model_id.into(),
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            max_response_tokens: DEFAULT_MAX_RESPONSE_TOKENS,
            temperature: 0.0,
        };
        if request.system_prompt.is_empty() || request.user_prompt.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        Ok(request)
    }

    pub fn with_max_response_tokens(mut self, max: u32) -> Self {
        self.max_response_tokens = max.max(1);
        self
    }

    /// Hex SHA-256 of the prompt pair; the key scripted providers match on.
    pub fn prompt_digest(&self) -> String {
        sha256_hex(&[self.system_prompt.as_bytes(), self.user_prompt.as_bytes()])
    }

    pub fn estimated_prompt_tokens(&self) -> u64 {
        (estimate_tokens(&self.system_prompt) + estimate_tokens(&self.user_prompt)) as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        TokenUsage { prompt_tokens, completion_tokens, total_tokens: prompt_tokens + completion_tokens }
    }

    pub fn is_consistent(&self) -> bool {
        self.total_tokens == self.prompt_tokens + self.completion_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(self.prompt_tokens + rhs.prompt_tokens, self.completion_tokens + rhs.completion_tokens)
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl core::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub model_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("authentication rejected by provider: {0}")]
    Authentication(String),
    #[error("context length exceeded: {0}")]
    ContextLengthExceeded(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("scripted provider has no reply for prompt digest {0}")]
    UnmappedPrompt(String),
    #[error("no provider configured for model {0}")]
    UnknownModel(String),
    #[error("chat prompts must not be empty")]
    EmptyPrompt,
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

impl GatewayError {
    /// Only transport failures are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

/// A synchronous chat-completion backend.
pub trait Provider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for alloc::boxed::Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}
