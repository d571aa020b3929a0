//! Webhook authentication and decoding, plus the text-size rules for
//! outbound comments and chat notifications.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::Sha256;
use thiserror::Error;

use crate::diff::{PullRequestError, PullRequestRef};

pub const EVENT_HEADER: &str = "X-GitHub-Event";
pub const SIGNATURE_HEADER: &str = "X-Hub-Signature-256";
pub const DELIVERY_HEADER: &str = "X-GitHub-Delivery";
pub const SIGNATURE_PREFIX: &str = "sha256=";

pub const PULL_REQUEST_EVENT: &str = "pull_request";
pub const TRIGGERING_ACTIONS: [&str; 3] = ["opened", "synchronize", "reopened"];

pub const MAX_NOTIFICATION_CHARS: usize = 4_000;
pub const TRUNCATION_MARKER: &str = "\u{2026}";
pub const MAX_COMMENT_CHARS: usize = 65_000;

/// Constant-time check of a `sha256=<hex>` signature over `payload`.
pub fn verify_signature(payload: &[u8], secret: &[u8], signature_header: &str) -> bool {
    let Some(hex_part) = signature_header.strip_prefix(SIGNATURE_PREFIX) else {
        return false;
    };
    // Only lowercase hex is a valid rendering.
    if hex_part.len() != 64 || !hex_part.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return false;
    }
    let Ok(expected) = hex::decode(hex_part) else {
        return false;
    };
    let Ok(mut mac) = Hmac::<Sha256>::new_from_slice(secret) else {
        return false;
    };
    mac.update(payload);
    mac.verify_slice(&expected).is_ok()
}

/// The header value a sender would attach to `payload`.
pub fn sign(payload: &[u8], secret: &[u8]) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(payload);
    format!("{SIGNATURE_PREFIX}{}", hex::encode(mac.finalize().into_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WebhookEvent {
    pub event_kind: String,
    pub delivery_id: String,
    pub action: String,
    pub pr: PullRequestRef,
    pub raw_payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodedEvent {
    /// A pull request was opened, reopened or updated.
    Trigger(WebhookEvent),
    /// Anything else: other event kinds and non-triggering actions.
    Ignored { event_kind: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("missing {0} header")]
    MissingHeader(&'static str),
    #[error("payload is not JSON: {0}")]
    NotJson(String),
    #[error("malformed pull_request payload: missing {0}")]
    MissingField(&'static str),
    #[error("malformed pull_request payload: {0}")]
    InvalidPullRequest(#[from] PullRequestError),
}

fn str_at<'a>(v: &'a Value, path: &[&str]) -> Option<&'a str> {
    path.iter().try_fold(v, |v, k| v.get(k))?.as_str()
}

/// Decodes a delivery whose signature has already been checked.
pub fn decode_event(
    event_kind: Option<&str>,
    delivery_id: Option<&str>,
    payload: &[u8],
) -> Result<DecodedEvent, DecodeError> {
    let event_kind = event_kind.filter(|s| !s.is_empty()).ok_or(DecodeError::MissingHeader(EVENT_HEADER))?;
    let delivery_id = delivery_id.filter(|s| !s.is_empty()).ok_or(DecodeError::MissingHeader(DELIVERY_HEADER))?;
    if event_kind != PULL_REQUEST_EVENT {
        return Ok(DecodedEvent::Ignored {
            event_kind: event_kind.into(),
            reason: format!("event {event_kind} does not trigger analysis"),
        });
    }
    let body: Value = serde_json::from_slice(payload).map_err(|e| DecodeError::NotJson(e.to_string()))?;
    let action = str_at(&body, &["action"]).ok_or(DecodeError::MissingField("action"))?;
    let number = body
        .get("number")
        .or_else(|| body.get("pull_request").and_then(|p| p.get("number")))
        .and_then(Value::as_u64)
        .ok_or(DecodeError::MissingField("number"))?;
    let name = str_at(&body, &["repository", "name"]).ok_or(DecodeError::MissingField("repository.name"))?;
    let owner =
        str_at(&body, &["repository", "owner", "login"]).ok_or(DecodeError::MissingField("repository.owner.login"))?;
    let head =
        str_at(&body, &["pull_request", "head", "sha"]).ok_or(DecodeError::MissingField("pull_request.head.sha"))?;
    let base =
        str_at(&body, &["pull_request", "base", "sha"]).ok_or(DecodeError::MissingField("pull_request.base.sha"))?;
    let pr = PullRequestRef::new(owner, name, number, head, base)?;
    if !TRIGGERING_ACTIONS.contains(&action) {
        return Ok(DecodedEvent::Ignored {
            event_kind: event_kind.into(),
            reason: format!("action {action} does not trigger analysis"),
        });
    }
    Ok(DecodedEvent::Trigger(WebhookEvent {
        event_kind: event_kind.into(),
        delivery_id: delivery_id.into(),
        action: action.into(),
        pr,
        raw_payload: payload.to_vec(),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Slack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationMessage {
    pub channel_kind: ChannelKind,
    pub text: String,
}

impl NotificationMessage {
    /// Slack message, cut to [`MAX_NOTIFICATION_CHARS`] including the marker.
    pub fn slack(text: &str) -> Self {
        NotificationMessage { channel_kind: ChannelKind::Slack, text: truncate_chars(text, MAX_NOTIFICATION_CHARS) }
    }
}

/// At most `limit` characters; longer text keeps a prefix plus the marker.
pub fn truncate_chars(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.into();
    }
    let keep = limit.saturating_sub(TRUNCATION_MARKER.chars().count());
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

fn part_suffix(i: usize, n: usize) -> String {
    format!("\n\n({i}/{n})")
}

/// Splits `body` into comments of at most `limit` characters, each tagged
/// `(i/n)` when more than one is needed. Cuts prefer line breaks.
pub fn split_comment(body: &str, limit: usize) -> Vec<String> {
    if body.chars().count() <= limit {
        return alloc::vec![body.into()];
    }
    let chars: Vec<char> = body.chars().collect();
    let mut parts_guess = chars.len().div_ceil(limit).max(2);
    loop {
        let room = limit.saturating_sub(part_suffix(parts_guess, parts_guess).chars().count()).max(1);
        let pieces = cut_pieces(&chars, room);
        if pieces.len() <= parts_guess {
            let n = pieces.len();
            return pieces
                .into_iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut s: String = p.iter().collect();
                    s.push_str(&part_suffix(i + 1, n));
                    s
                })
                .collect();
        }
        parts_guess = pieces.len();
    }
}

fn cut_pieces(chars: &[char], room: usize) -> Vec<&[char]> {
    let mut out = Vec::new();
    let mut rest = chars;
    while rest.len() > room {
        let window = &rest[..room];
        let cut = match window.iter().rposition(|&c| c == '\n') {
            Some(p) if p + 1 >= room / 2 => p + 1,
            _ => room,
        };
        out.push(&rest[..cut]);
        rest = &rest[cut..];
    }
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}
