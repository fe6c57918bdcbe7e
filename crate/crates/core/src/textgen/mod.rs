//! Text generation backends: an OpenAI-compatible HTTP client, a deterministic
//! mock, and an LLM-as-judge helper built on either.

mod http;
mod judge;
mod mock;

pub use http::{HttpTextGenerator, RetryPolicy, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
pub use judge::{judge_response, parse_verdict, JudgeVerdict, DEFAULT_JUDGE_THRESHOLD, DEFAULT_RUBRIC};
pub use mock::{mock_complete, MockBehavior, MockGenerator};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TextGenError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint unreachable after {attempts} attempt(s): {reason}")]
    Unreachable { attempts: u32, reason: String },
    #[error("authentication rejected (HTTP {0})")]
    AuthFailure(u16),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("judge output has no parseable verdict: {0}")]
    MalformedVerdict(String),
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub system: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GenRequest {
    pub fn new(system: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            prompt: prompt.into(),
            max_tokens: 256,
            temperature: 0.0,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), TextGenError> {
        if self.max_tokens < 1 {
            return Err(TextGenError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(TextGenError::InvalidRequest(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenResponse {
    pub text: String,
    pub finish: FinishReason,
}

impl GenResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish: FinishReason::Stop,
        }
    }

    /// Error responses never carry text.
    pub fn error() -> Self {
        Self {
            text: String::new(),
            finish: FinishReason::Error,
        }
    }
}

/// Anything that turns a request into a completion. Implementations must be
/// shareable across threads; each call is independent.
pub trait TextGenerator: Send + Sync {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, TextGenError>;
}

impl<T: TextGenerator + ?Sized> TextGenerator for &T {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, TextGenError> {
        (**self).complete(req)
    }
}

impl<T: TextGenerator + ?Sized> TextGenerator for Box<T> {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, TextGenError> {
        (**self).complete(req)
    }
}
