//! TOML configuration with environment overrides for secrets.
//!
//! ```toml
//! analyzers = ["mock-rules"]
//! opening_balance = 1000000
//!
//! [token_budget]
//! max_context_tokens = 8000
//! reserved_tokens = 1000
//!
//! [rates.mock-rules]
//! prompt_rate = 1
//! completion_rate = 1
//!
//! [providers.gpt-4o]
//! kind = "openai"
//! base_url = "https://api.openai.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bugdar_core::analysis::judge::{DEFAULT_JUDGE_CRITERION, MAX_CANDIDATES};
use bugdar_core::analysis::{PromptTemplate, Severity};
use bugdar_core::chunking::TokenBudget;
use bugdar_core::gateway::{
    ModelRate, RateCard, RuleMockProvider, ScriptedProvider, ScriptedReply, DEFAULT_MAX_RESPONSE_TOKENS,
    RULE_MOCK_MODEL,
};
use bugdar_core::retrieval::DEFAULT_TOP_K;
use serde::Deserialize;
use thiserror::Error;

use crate::clock::Sleeper;
use crate::pipeline::PipelineSettings;
use crate::providers::{Local, ProviderRegistry, RemoteProvider};

pub const ENV_GITHUB_TOKEN: &str = "BUGDAR_GITHUB_TOKEN";
pub const ENV_WEBHOOK_SECRET: &str = "BUGDAR_WEBHOOK_SECRET";
pub const ENV_SLACK_WEBHOOK_URL: &str = "BUGDAR_SLACK_WEBHOOK_URL";
pub const ENV_GITHUB_API_BASE: &str = "BUGDAR_GITHUB_API_BASE";
pub const DEFAULT_STORE: &str = ".bugdar";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub max_context_tokens: usize,
    pub reserved_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub system_path: Option<PathBuf>,
    pub user_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// The built-in pattern matcher.
    RuleMock,
    /// Canned replies: a fixed `reply` for every prompt.
    Scripted {
        reply: String,
        #[serde(default)]
        prompt_tokens: u64,
        #[serde(default)]
        completion_tokens: u64,
    },
    /// An OpenAI-compatible chat completion endpoint.
    Openai { base_url: String, api_key_env: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GithubConfig {
    #[serde(default = "default_api_base")]
    pub api_base: String,
    pub token: Option<String>,
    pub webhook_secret: Option<String>,
    #[serde(default = "default_listen")]
    pub listen: String,
}

impl Default for GithubConfig {
    fn default() -> Self {
        GithubConfig { api_base: default_api_base(), token: None, webhook_secret: None, listen: default_listen() }
    }
}

fn default_api_base() -> String {
    "https://api.github.com".into()
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackConfig {
    pub webhook_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub analyzers: Vec<String>,
    pub judge_model: Option<String>,
    pub judge_criterion: String,
    pub token_budget: BudgetConfig,
    pub rag_enabled: bool,
    pub retrieval_k: usize,
    pub max_response_tokens: u32,
    pub prompt: PromptConfig,
    pub rates: BTreeMap<String, ModelRate>,
    pub providers: BTreeMap<String, ProviderConfig>,
    pub opening_balance: u64,
    pub github: GithubConfig,
    pub slack: SlackConfig,
    pub store: PathBuf,
    pub worker_limit: usize,
    pub post_comment: bool,
    pub severity_gate: Severity,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            analyzers: vec![RULE_MOCK_MODEL.into()],
            judge_model: None,
            judge_criterion: DEFAULT_JUDGE_CRITERION.into(),
            token_budget: BudgetConfig { max_context_tokens: 8_000, reserved_tokens: 1_000 },
            rag_enabled: true,
            retrieval_k: DEFAULT_TOP_K,
            max_response_tokens: DEFAULT_MAX_RESPONSE_TOKENS,
            prompt: PromptConfig::default(),
            rates: BTreeMap::from([(RULE_MOCK_MODEL.to_string(), ModelRate { prompt_rate: 1, completion_rate: 1 })]),
            providers: BTreeMap::new(),
            opening_balance: 1_000_000,
            github: GithubConfig::default(),
            slack: SlackConfig::default(),
            store: PathBuf::from(DEFAULT_STORE),
            worker_limit: 4,
            post_comment: true,
            severity_gate: Severity::High,
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })
    }

    /// Reads `path`, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
                let mut c = Self::from_toml(&text, p)?;
                // Relative prompt paths are taken from the config file's directory.
                if let Some(dir) = p.parent() {
                    for slot in [&mut c.prompt.system_path, &mut c.prompt.user_path] {
                        if let Some(rel) = slot.as_ref().filter(|r| r.is_relative()) {
                            *slot = Some(dir.join(rel));
                        }
                    }
                }
                c
            }
            None => AppConfig::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_GITHUB_TOKEN) {
            self.github.token = Some(v);
        }
        if let Some(v) = lookup(ENV_WEBHOOK_SECRET) {
            self.github.webhook_secret = Some(v);
        }
        if let Some(v) = lookup(ENV_SLACK_WEBHOOK_URL) {
            self.slack.webhook_url = Some(v);
        }
        if let Some(v) = lookup(ENV_GITHUB_API_BASE) {
            self.github.api_base = v;
        }
    }

    fn provider_for(&self, model: &str) -> Option<ProviderConfig> {
        match self.providers.get(model) {
            Some(p) => Some(p.clone()),
            None if model == RULE_MOCK_MODEL => Some(ProviderConfig::RuleMock),
            None => None,
        }
    }

    fn models(&self) -> impl Iterator<Item = (&'static str, &String)> {
        self.analyzers.iter().map(|m| ("analyzers", m)).chain(self.judge_model.iter().map(|m| ("judge_model", m)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.analyzers.is_empty() {
            return Err(invalid("analyzers", "at least one analyzer model is required"));
        }
        if self.analyzers.len() > MAX_CANDIDATES {
            return Err(invalid("analyzers", format!("at most {MAX_CANDIDATES} analyzers can be judged")));
        }
        if let Some(dup) = self.analyzers.iter().enumerate().find(|(i, m)| self.analyzers[..*i].contains(m)) {
            return Err(invalid("analyzers", format!("{} is listed twice", dup.1)));
        }
        if self.analyzers.len() >= 2 && self.judge_model.is_none() {
            return Err(invalid("judge_model", "required when two or more analyzers are configured"));
        }
        if self.worker_limit == 0 {
            return Err(invalid("worker_limit", "must be at least 1"));
        }
        if self.retrieval_k == 0 {
            return Err(invalid("retrieval_k", "must be at least 1"));
        }
        if self.max_response_tokens == 0 {
            return Err(invalid("max_response_tokens", "must be at least 1"));
        }
        self.budget()?;
        for (field, model) in self.models() {
            if model.is_empty() {
                return Err(invalid(field, "model ids must not be empty"));
            }
            if self.provider_for(model).is_none() {
                return Err(invalid(format!("providers.{model}"), "no provider configured for this model"));
            }
            if !self.rates.contains_key(model) {
                return Err(invalid(format!("rates.{model}"), "no rate configured for this model"));
            }
        }
        self.template()?;
        Ok(())
    }

    /// Checks the settings `serve` needs beyond [`validate`](Self::validate).
    pub fn validate_for_serve(&self) -> Result<(), ConfigError> {
        if self.github.token.as_deref().unwrap_or("").is_empty() {
            return Err(invalid("github.token", format!("required to serve (or set {ENV_GITHUB_TOKEN})")));
        }
        if self.github.webhook_secret.as_deref().unwrap_or("").is_empty() {
            return Err(invalid("github.webhook_secret", format!("required to serve (or set {ENV_WEBHOOK_SECRET})")));
        }
        Ok(())
    }

    pub fn budget(&self) -> Result<TokenBudget, ConfigError> {
        TokenBudget::new(self.token_budget.max_context_tokens, self.token_budget.reserved_tokens)
            .map_err(|e| invalid("token_budget", e.to_string()))
    }

    pub fn template(&self) -> Result<PromptTemplate, ConfigError> {
        let mut template = PromptTemplate::default();
        for (field, path, slot) in [
            ("prompt.system_path", &self.prompt.system_path, &mut template.system),
            ("prompt.user_path", &self.prompt.user_path, &mut template.user),
        ] {
            if let Some(p) = path {
                *slot = std::fs::read_to_string(p).map_err(|e| invalid(field, format!("{}: {e}", p.display())))?;
            }
        }
        template.validate().map_err(|e| invalid("prompt", e.to_string()))?;
        Ok(template)
    }

    pub fn rate_card(&self) -> RateCard {
        RateCard(self.rates.clone())
    }

    pub fn pipeline_settings(&self) -> Result<PipelineSettings, ConfigError> {
        let mut s = PipelineSettings::new(self.analyzers.clone(), self.budget()?);
        s.judge_model = self.judge_model.clone();
        s.judge_criterion = self.judge_criterion.clone();
        s.rag_enabled = self.rag_enabled;
        s.retrieval_k = self.retrieval_k;
        s.template = self.template()?;
        s.max_response_tokens = self.max_response_tokens;
        s.worker_limit = self.worker_limit;
        s.post_comment = self.post_comment;
        Ok(s)
    }

    /// Providers for every configured model; remote API keys come from the
    /// environment.
    pub fn providers(
        &self,
        sleeper: Arc<dyn Sleeper>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<ProviderRegistry, ConfigError> {
        let mut registry = ProviderRegistry::new();
        for (_, model) in self.models() {
            if registry.contains(model) {
                continue;
            }
            match self.provider_for(model).expect("validated") {
                ProviderConfig::RuleMock => registry.insert(model.clone(), Local(RuleMockProvider)),
                ProviderConfig::Scripted { reply, prompt_tokens, completion_tokens } => registry.insert(
                    model.clone(),
                    Local(ScriptedProvider::new().with_fallback(ScriptedReply::new(
                        reply,
                        prompt_tokens,
                        completion_tokens,
                    ))),
                ),
                ProviderConfig::Openai { base_url, api_key_env } => {
                    let key = env(&api_key_env).filter(|k| !k.is_empty()).ok_or_else(|| {
                        invalid(format!("providers.{model}.api_key_env"), format!("{api_key_env} is not set"))
                    })?;
                    registry.insert(model.clone(), RemoteProvider::new(base_url, key, sleeper.clone()));
                }
            }
        }
        Ok(registry)
    }
}
