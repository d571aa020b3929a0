use std::time::Duration;

use async_trait::async_trait;
use bugdar_core::webhook::NotificationMessage;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum Delivery {
    Delivered,
    Failed(String),
}

impl Delivery {
    pub fn is_delivered(&self) -> bool {
        matches!(self, Delivery::Delivered)
    }
}

#[async_trait]
pub trait Notifier: Send + Sync {
    async fn notify(&self, message: &NotificationMessage) -> Delivery;
}

/// Slack incoming-webhook sender. One attempt per message.
pub struct SlackNotifier {
    http: reqwest::Client,
    webhook_url: String,
}

impl SlackNotifier {
    pub fn new(webhook_url: impl Into<String>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("reqwest client builds with static settings");
        SlackNotifier { http, webhook_url: webhook_url.into() }
    }
}

#[async_trait]
impl Notifier for SlackNotifier {
    async fn notify(&self, message: &NotificationMessage) -> Delivery {
        notify_slack(&self.http, &self.webhook_url, message).await
    }
}

pub async fn notify_slack(http: &reqwest::Client, webhook_url: &str, message: &NotificationMessage) -> Delivery {
    let body = serde_json::json!({ "text": message.text });
    match http.post(webhook_url).json(&body).send().await {
        Ok(resp) if resp.status().is_success() => Delivery::Delivered,
        Ok(resp) => Delivery::Failed(format!("status {}", resp.status())),
        Err(e) => Delivery::Failed(e.to_string()),
    }
}
