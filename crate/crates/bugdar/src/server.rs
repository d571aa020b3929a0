//! `POST /webhook`: authenticate, decode, and hand triggering events to
//! the pipeline in the background.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::Router;
use bugdar_core::webhook::{
    decode_event, verify_signature, DecodedEvent, WebhookEvent, DELIVERY_HEADER, EVENT_HEADER, SIGNATURE_HEADER,
};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tokio_util::task::TaskTracker;

use crate::pipeline::Pipeline;

pub trait Dispatch: Send + Sync {
    fn dispatch(&self, event: WebhookEvent);
}

/// Runs the pipeline for each event, at most `worker_limit` at a time.
pub struct PipelineDispatcher {
    pipeline: Arc<Pipeline>,
    tracker: TaskTracker,
    permits: Arc<Semaphore>,
}

impl PipelineDispatcher {
    pub fn new(pipeline: Arc<Pipeline>, worker_limit: usize) -> Self {
        PipelineDispatcher {
            pipeline,
            tracker: TaskTracker::new(),
            permits: Arc::new(Semaphore::new(worker_limit.max(1))),
        }
    }

    /// Stops accepting work and waits for in-flight runs.
    pub async fn drain(&self) {
        self.tracker.close();
        self.tracker.wait().await;
    }
}

impl Dispatch for PipelineDispatcher {
    fn dispatch(&self, event: WebhookEvent) {
        let pipeline = self.pipeline.clone();
        let permits = self.permits.clone();
        self.tracker.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore never closed");
            match pipeline.run_pipeline(&event.pr).await {
                Ok(outcome) => tracing::info!(
                    delivery = %event.delivery_id,
                    pr = %event.pr,
                    report = %outcome.report.report_id,
                    findings = outcome.report.findings.len(),
                    "analysis complete"
                ),
                Err(e) => tracing::error!(delivery = %event.delivery_id, pr = %event.pr, error = %e, "analysis failed"),
            }
        });
    }
}

#[derive(Clone)]
pub struct WebhookState {
    secret: Arc<Vec<u8>>,
    dispatcher: Arc<dyn Dispatch>,
}

impl WebhookState {
    pub fn new(secret: impl Into<Vec<u8>>, dispatcher: Arc<dyn Dispatch>) -> Self {
        WebhookState { secret: Arc::new(secret.into()), dispatcher }
    }
}

fn header<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

/// Status and body for one delivery. Nothing past the signature check runs
/// for an unauthenticated request.
pub fn handle_delivery(state: &WebhookState, headers: &HeaderMap, body: &[u8]) -> (StatusCode, String) {
    let signature = header(headers, SIGNATURE_HEADER).unwrap_or("");
    if !verify_signature(body, &state.secret, signature) {
        return (StatusCode::UNAUTHORIZED, "invalid signature".into());
    }
    match decode_event(header(headers, EVENT_HEADER), header(headers, DELIVERY_HEADER), body) {
        Ok(DecodedEvent::Trigger(event)) => {
            let msg = format!("accepted {} for {}", event.delivery_id, event.pr);
            state.dispatcher.dispatch(event);
            (StatusCode::ACCEPTED, msg)
        }
        Ok(DecodedEvent::Ignored { reason, .. }) => (StatusCode::OK, format!("ignored: {reason}")),
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn webhook(State(state): State<WebhookState>, headers: HeaderMap, body: Bytes) -> (StatusCode, String) {
    let (status, msg) = handle_delivery(&state, &headers, &body);
    tracing::debug!(status = status.as_u16(), %msg, "webhook delivery");
    (status, msg)
}

pub fn router(state: WebhookState) -> Router {
    Router::new().route("/webhook", post(webhook)).with_state(state)
}

/// Serves until `shutdown` resolves. Callers drain the dispatcher after.
pub async fn serve(
    listener: TcpListener,
    state: WebhookState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
