use std::future::Future;
use std::time::Duration;

use crate::clock::Sleeper;

/// Waits before the first, second and third retry.
pub const BACKOFF: [Duration; 3] = [Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)];

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// backoff schedule is exhausted (at most `1 + BACKOFF.len()` attempts).
pub async fn with_retries<T, E, F, Fut>(
    sleeper: &dyn Sleeper,
    mut op: F,
    retryable: impl Fn(&E) -> bool,
) -> Result<T, E>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<T, E>>,
{
    let mut delays = BACKOFF.iter();
    loop {
        match op().await {
            Ok(v) => return Ok(v),
            Err(e) if retryable(&e) => match delays.next() {
                Some(&d) => {
                    tracing::debug!(delay_ms = d.as_millis() as u64, "retrying after transient failure");
                    sleeper.sleep(d).await;
                }
                None => return Err(e),
            },
            Err(e) => return Err(e),
        }
    }
}
