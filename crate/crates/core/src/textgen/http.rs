use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{FinishReason, GenRequest, GenResponse, TextGenError, TextGenerator};

pub const ENV_ENDPOINT: &str = "KS_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "KS_LLM_API_KEY";
pub const ENV_MODEL: &str = "KS_LLM_MODEL";

const DEFAULT_MODEL: &str = "gpt-4o";
const COMPLETIONS_PATH: &str = "/v1/chat/completions";

/// Exponential backoff for transient failures (connect errors, timeouts, 5xx, 429).
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(retry as i32);
        let secs = self.initial_backoff.as_secs_f64() * factor;
        Duration::from_secs_f64(secs.min(self.max_backoff.as_secs_f64()))
    }
}

/// Counting gate that caps the number of requests in flight.
#[derive(Debug)]
struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlightGate);

impl InFlightGate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("gate lock poisoned");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("gate lock poisoned");
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("gate lock poisoned");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(GenResponse),
    Retry {
        reason: String,
        rate_limited: bool,
        wait: Option<Duration>,
    },
}

/// Blocking client for OpenAI-compatible `/v1/chat/completions` servers.
pub struct HttpTextGenerator {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    model: String,
    retry: RetryPolicy,
    gate: InFlightGate,
}

impl HttpTextGenerator {
    /// `endpoint` is either a base URL or the full completions URL.
    pub fn new(endpoint: &str, api_key: Option<String>, model: impl Into<String>) -> Result<Self, TextGenError> {
        let endpoint = endpoint.trim().trim_end_matches('/');
        if endpoint.is_empty() {
            return Err(TextGenError::Config("empty endpoint".into()));
        }
        let url = if endpoint.ends_with(COMPLETIONS_PATH) {
            endpoint.to_string()
        } else {
            format!("{endpoint}{COMPLETIONS_PATH}")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| TextGenError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url,
            api_key,
            model: model.into(),
            retry: RetryPolicy::default(),
            gate: InFlightGate::new(4),
        })
    }

    /// Configure from `KS_LLM_ENDPOINT`, `KS_LLM_API_KEY` and `KS_LLM_MODEL`.
    /// `endpoint` overrides the environment variable when given.
    pub fn from_env(endpoint: Option<&str>) -> Result<Self, TextGenError> {
        let endpoint = match endpoint {
            Some(e) => e.to_string(),
            None => {
                std::env::var(ENV_ENDPOINT).map_err(|_| TextGenError::Config(format!("{ENV_ENDPOINT} is not set")))?
            }
        };
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        Self::new(&endpoint, key, model)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.gate = InFlightGate::new(limit);
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn body(&self, req: &GenRequest) -> Value {
        let mut messages = Vec::new();
        if !req.system.is_empty() {
            messages.push(json!({"role": "system", "content": req.system}));
        }
        messages.push(json!({"role": "user", "content": req.prompt}));
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<Attempt, TextGenError> {
        let _permit = self.gate.acquire();
        let mut request = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = match request.send() {
            Ok(r) => r,
            Err(e) => {
                return Ok(Attempt::Retry {
                    reason: e.to_string(),
                    rate_limited: false,
                    wait: None,
                })
            }
        };
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(Duration::from_secs_f64);
        match status {
            200..=299 => {
                let payload: Value = response
                    .json()
                    .map_err(|e| TextGenError::MalformedResponse(e.to_string()))?;
                parse_completion(&payload).map(Attempt::Done)
            }
            401 | 403 => Err(TextGenError::AuthFailure(status)),
            429 => Ok(Attempt::Retry {
                reason: "HTTP 429".into(),
                rate_limited: true,
                wait: retry_after,
            }),
            500..=599 => Ok(Attempt::Retry {
                reason: format!("HTTP {status}"),
                rate_limited: false,
                wait: retry_after,
            }),
            _ => Err(TextGenError::Http {
                status,
                body: response.text().unwrap_or_default(),
            }),
        }
    }
}

impl TextGenerator for HttpTextGenerator {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, TextGenError> {
        req.validate()?;
        let body = self.body(req);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body)? {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Retry {
                    reason,
                    rate_limited,
                    wait,
                } => {
                    if attempts > self.retry.max_retries {
                        return Err(if rate_limited {
                            TextGenError::RateLimited { attempts }
                        } else {
                            TextGenError::Unreachable { attempts, reason }
                        });
                    }
                    let delay = wait
                        .map(|w| w.min(self.retry.max_backoff))
                        .unwrap_or_else(|| self.retry.delay(attempts - 1));
                    log::debug!("retrying completion after {reason} in {delay:?}");
                    thread::sleep(delay);
                }
            }
        }
    }
}

fn parse_completion(payload: &Value) -> Result<GenResponse, TextGenError> {
    let choice = payload
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| TextGenError::MalformedResponse("no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TextGenError::MalformedResponse("choice has no message content".into()))?;
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Stop,
    };
    Ok(GenResponse {
        text: text.to_string(),
        finish,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_caps() {
        let policy = RetryPolicy {
            max_retries: 5,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_millis(350),
            multiplier: 2.0,
        };
        assert_eq!(policy.delay(0), Duration::from_millis(100));
        assert_eq!(policy.delay(1), Duration::from_millis(200));
        assert_eq!(policy.delay(2), Duration::from_millis(350));
    }

    #[test]
    fn url_is_normalized() {
        let a = HttpTextGenerator::new("http://localhost:9/", None, "m").unwrap();
        let b = HttpTextGenerator::new("http://localhost:9/v1/chat/completions", None, "m").unwrap();
        assert_eq!(a.url(), "http://localhost:9/v1/chat/completions");
        assert_eq!(a.url(), b.url());
    }

    #[test]
    fn body_includes_seed_only_when_set() {
        let client = HttpTextGenerator::new("http://x", None, "m").unwrap();
        let req = GenRequest::new("", "hi");
        let body = client.body(&req);
        assert!(body.get("seed").is_none());
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        let body = client.body(&GenRequest::new("sys", "hi").with_seed(4));
        assert_eq!(body["seed"], 4);
        assert_eq!(body["messages"][0]["role"], "system");
    }

    #[test]
    fn parses_completion_payload() {
        let payload =
            json!({"choices": [{"message": {"role": "assistant", "content": "ok"}, "finish_reason": "length"}]});
        let resp = parse_completion(&payload).unwrap();
        assert_eq!(resp.text, "ok");
        assert_eq!(resp.finish, FinishReason::Length);
        assert!(parse_completion(&json!({"choices": []})).is_err());
    }
}
