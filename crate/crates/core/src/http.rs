//! JSON-over-HTTP POST with exponential backoff, shared by every remote client.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 1000,
            factor: 2.0,
            max_delay_ms: 30_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, where `attempt` counts from 1.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self.factor.powi(attempt.saturating_sub(1) as i32);
        let mut ms = (self.base_delay_ms as f64 * exp).min(self.max_delay_ms as f64);
        if self.jitter && ms > 0.0 {
            ms *= 1.0 + rand::thread_rng().gen_range(0.0..0.25);
        }
        Duration::from_micros((ms * 1000.0) as u64)
    }
}

/// 429 and server errors are worth retrying; any other 4xx is final.
pub fn is_retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

#[derive(Debug)]
pub struct JsonResponse {
    pub body: Value,
    pub attempts: u32,
}

pub fn build_client(timeout: Duration) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Transport {
            attempts: 0,
            message: e.to_string(),
        })
}

pub fn bearer_from_env(var: &str) -> Option<String> {
    if var.is_empty() {
        return None;
    }
    std::env::var(var).ok().filter(|v| !v.is_empty())
}

pub fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    bearer: Option<&str>,
    headers: &[(&str, &str)],
    body: &Value,
    policy: &RetryPolicy,
) -> Result<JsonResponse> {
    let max_attempts = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut req = client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let failure = match req.send() {
            Ok(resp) => {
                let status = resp.status().as_u16();
                let text = resp.text().unwrap_or_default();
                if (200..300).contains(&status) {
                    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Provider {
                        status,
                        message: format!("response is not JSON: {e}"),
                    })?;
                    if let Some(err) = value.get("error").filter(|e| !e.is_null()) {
                        return Err(Error::Provider {
                            status,
                            message: error_message(err),
                        });
                    }
                    return Ok(JsonResponse { body: value, attempts: attempt });
                }
                let message = serde_json::from_str::<Value>(&text)
                    .ok()
                    .and_then(|v| v.get("error").map(error_message))
                    .unwrap_or(text);
                if !is_retryable(status) {
                    return Err(Error::Provider { status, message });
                }
                Error::Provider { status, message }
            }
            Err(e) => Error::Transport {
                attempts: attempt,
                message: e.to_string(),
            },
        };
        if attempt >= max_attempts {
            return Err(match failure {
                Error::Provider { status, message } => Error::Transport {
                    attempts: attempt,
                    message: format!("last status {status}: {message}"),
                },
                other => other,
            });
        }
        log::debug!("POST {url} attempt {attempt} failed: {failure}; retrying");
        std::thread::sleep(policy.delay(attempt));
    }
}

fn error_message(err: &Value) -> String {
    match err {
        Value::String(s) => s.clone(),
        Value::Object(o) => o
            .get("message")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| err.to_string()),
        other => other.to_string(),
    }
}
