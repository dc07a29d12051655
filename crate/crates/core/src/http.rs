//! Blocking JSON-over-HTTP plumbing shared by the chat, scoring and edit
//! clients: retry with exponential backoff and a per-endpoint in-flight cap.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::Value;

use crate::error::BackendError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(4),
        }
    }
}

impl RetryPolicy {
    /// Backoff before attempt `attempt + 1`, where `attempt` starts at 1.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `f` until it succeeds, fails permanently, or attempts run out.
    /// Returns the result and the number of attempts made.
    pub fn run<T>(
        &self,
        endpoint: &str,
        mut f: impl FnMut(u32) -> Result<T, BackendError>,
    ) -> (Result<T, BackendError>, u32) {
        let max = self.max_attempts.max(1);
        for attempt in 1..=max {
            match f(attempt) {
                Ok(v) => return (Ok(v), attempt),
                Err(e) if !e.is_transient() => return (Err(e), attempt),
                Err(e) => {
                    tracing::warn!(endpoint, attempt, error = %e, "transient backend failure");
                    if attempt < max {
                        std::thread::sleep(self.delay(attempt));
                    }
                }
            }
        }
        (
            Err(BackendError::Timeout {
                endpoint: endpoint.to_string(),
                attempts: max,
            }),
            max,
        )
    }
}

/// Counting semaphore bounding concurrent requests to one endpoint.
#[derive(Debug)]
pub struct ConcurrencyLimit {
    max: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limit: &'a ConcurrencyLimit,
}

impl ConcurrencyLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_use.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        Permit { limit: self }
    }

    pub fn in_use(&self) -> usize {
        *self.in_use.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.in_use.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.limit.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    pub retry: RetryPolicy,
    limit: Arc<ConcurrencyLimit>,
}

impl HttpClient {
    pub fn new(timeout: Duration, retry: RetryPolicy, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            retry,
            limit: Arc::new(ConcurrencyLimit::new(max_in_flight)),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.limit.max()
    }

    /// POSTs `body` and decodes a JSON reply, retrying transient failures.
    pub fn post_json(
        &self,
        url: &str,
        body: &Value,
        headers: &[(String, String)],
    ) -> (Result<Value, BackendError>, u32) {
        self.retry.run(url, |_| {
            let _permit = self.limit.acquire();
            let mut req = self.agent.post(url).header("Content-Type", "application/json");
            for (k, v) in headers {
                req = req.header(k.as_str(), v.as_str());
            }
            let mut resp = req.send_json(body).map_err(|e| transport(url, e))?;
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().map_err(|e| transport(url, e))?;
            if !(200..300).contains(&status) {
                return Err(BackendError::Status {
                    endpoint: url.to_string(),
                    status,
                    body: excerpt(&text),
                });
            }
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol {
                endpoint: url.to_string(),
                message: format!("reply is not JSON ({e}): {}", excerpt(&text)),
            })
        })
    }

    /// Single GET without retries; returns the status code.
    pub fn get_status(&self, url: &str) -> Result<u16, BackendError> {
        let _permit = self.limit.acquire();
        let resp = self.agent.get(url).call().map_err(|e| transport(url, e))?;
        Ok(resp.status().as_u16())
    }
}

fn transport(endpoint: &str, e: ureq::Error) -> BackendError {
    BackendError::Transport {
        endpoint: endpoint.to_string(),
        message: e.to_string(),
    }
}

pub(crate) fn excerpt(text: &str) -> String {
    const MAX: usize = 200;
    match text.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &text[..i]),
        None => text.to_string(),
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mockhttp::{MockResponse, MockServer};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
        }
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1), Duration::from_millis(250));
        assert_eq!(p.delay(2), Duration::from_millis(500));
        assert_eq!(p.delay(10), Duration::from_secs(4));
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let calls = AtomicUsize::new(0);
        let (r, attempts) = fast().run("x", |_| -> Result<(), _> {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Status {
                endpoint: "x".into(),
                status: 400,
                body: "bad".into(),
            })
        });
        assert!(matches!(r, Err(BackendError::Status { status: 400, .. })));
        assert_eq!(attempts, 1);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn exhausted_transient_errors_become_timeout() {
        let (r, attempts) = fast().run("x", |_| -> Result<(), _> {
            Err(BackendError::Status {
                endpoint: "x".into(),
                status: 503,
                body: String::new(),
            })
        });
        assert!(matches!(r, Err(BackendError::Timeout { attempts: 3, .. })));
        assert_eq!(attempts, 3);
    }

    #[test]
    fn post_json_retries_server_errors() {
        let hits = Arc::new(AtomicUsize::new(0));
        let h = hits.clone();
        let server = MockServer::start(move |_req| {
            if h.fetch_add(1, Ordering::SeqCst) < 2 {
                MockResponse::status(500, "boom")
            } else {
                MockResponse::json(200, &serde_json::json!({"ok": true}))
            }
        });
        let client = HttpClient::new(Duration::from_secs(5), fast(), 2);
        let (r, attempts) = client.post_json(&server.url("/x"), &serde_json::json!({}), &[]);
        assert_eq!(r.unwrap()["ok"], true);
        assert_eq!(attempts, 3);
    }

    #[test]
    fn limit_blocks_beyond_capacity() {
        let limit = Arc::new(ConcurrencyLimit::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let limit = limit.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _p = limit.acquire();
                    peak.fetch_max(limit.in_use(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(limit.in_use(), 0);
    }

    #[test]
    fn excerpt_truncates_on_char_boundary() {
        let long = "é".repeat(300);
        let e = excerpt(&long);
        assert!(e.ends_with("..."));
        assert_eq!(e.chars().count(), 203);
    }
}
