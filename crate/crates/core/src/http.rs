//! Blocking JSON-over-HTTP client with bounded exponential backoff, shared by
//! the external retriever, generator and NLI clients.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts, including the first one.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 200,
            max_backoff_ms: 5_000,
            timeout_ms: 120_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        let ms = self
            .initial_backoff_ms
            .saturating_mul(factor)
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

/// Checks that `url` is an absolute http(s) locator.
pub fn validate_url(url: &str) -> Result<()> {
    let rest = url
        .strip_prefix("http://")
        .or_else(|| url.strip_prefix("https://"))
        .ok_or_else(|| Error::Config(format!("endpoint {url:?} needs an http:// or https:// scheme")))?;
    if rest.is_empty() || rest.starts_with('/') {
        return Err(Error::Config(format!("endpoint {url:?} has no host")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    base: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(base: &str, retry: RetryPolicy) -> Result<Self> {
        validate_url(base)?;
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(retry.timeout_ms)))
            .build();
        Ok(JsonClient {
            base: base.trim_end_matches('/').to_string(),
            agent: ureq::Agent::new_with_config(config),
            retry,
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// POSTs `body` to `path`, retrying transport errors and 5xx responses.
    /// 4xx responses and undecodable bodies fail immediately.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{}", self.base, path);
        let payload = serde_json::to_string(body)?;
        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts.max(1) {
            if attempt > 0 {
                thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.try_post(&url, &payload) {
                Ok(Attempt::Done(text)) => {
                    return serde_json::from_str(&text).map_err(|e| {
                        Error::service(&url, format!("undecodable response: {e}"))
                    })
                }
                Ok(Attempt::Fatal(msg)) => return Err(Error::service(&url, msg)),
                Ok(Attempt::Retry(msg)) | Err(msg) => last = msg,
            }
            log::debug!("{url}: attempt {} failed: {last}", attempt + 1);
        }
        Err(Error::service(
            &url,
            format!("gave up after {} attempts: {last}", self.retry.max_attempts.max(1)),
        ))
    }

    fn try_post(&self, url: &str, payload: &str) -> std::result::Result<Attempt, String> {
        let response = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(payload)
            .map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok(match status {
            200..=299 => Attempt::Done(text),
            500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(format!("HTTP {status}: {text}")),
        })
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 100,
            max_backoff_ms: 350,
            timeout_ms: 1000,
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(1), Duration::from_millis(200));
        assert_eq!(p.backoff(2), Duration::from_millis(350));
        assert_eq!(p.backoff(70), Duration::from_millis(350));
    }

    #[test]
    fn url_validation() {
        assert!(validate_url("http://localhost:8080").is_ok());
        assert!(validate_url("https://x.org/api").is_ok());
        assert!(validate_url("localhost:8080").is_err());
        assert!(validate_url("http://").is_err());
    }
}
