//! Clients for the three external model services: a chat LLM, an MT engine
//! and a translation-pair scorer.
//!
//! Every service is a `Send + Sync` trait so one client can be shared by
//! concurrent workers. [`http`] holds the wire clients and [`mock`] the
//! deterministic offline stand-ins.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::LangCode;

pub mod http;
pub mod limit;
pub mod mock;

pub use limit::{map_bounded, RateLimiter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// OpenAI-compatible chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(rename = "model")]
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
}

impl ChatRequest {
    /// Single-turn request with one user message.
    pub fn user(model_id: impl Into<String>, prompt: impl Into<String>, temperature: f64, top_p: f64) -> Result<Self> {
        let req = ChatRequest {
            model_id: model_id.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: prompt.into(),
            }],
            temperature,
            top_p,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        match self.messages.last() {
            None => return Err(Error::invalid("chat request without messages")),
            Some(m) if m.role != Role::User => {
                return Err(Error::invalid("last chat message must come from the user"))
            }
            _ => {}
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::invalid(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }

    /// Content of the final user message.
    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub source_lang: LangCode,
    pub target_lang: LangCode,
    pub texts: Vec<String>,
    pub beam_size: u32,
}

impl TranslateRequest {
    pub fn validate(&self) -> Result<()> {
        if self.texts.is_empty() {
            return Err(Error::invalid("translate request without texts"));
        }
        if self.source_lang == self.target_lang {
            return Err(Error::invalid("source and target language are identical"));
        }
        if self.beam_size == 0 {
            return Err(Error::invalid("beam_size must be at least 1"));
        }
        Ok(())
    }
}

/// A language direction, serialized as `["de", "en"]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(LangCode, LangCode)", into = "(LangCode, LangCode)")]
pub struct Direction {
    pub source: LangCode,
    pub target: LangCode,
}

impl Direction {
    pub fn new(source: LangCode, target: LangCode) -> Self {
        Direction { source, target }
    }

    pub fn reversed(&self) -> Self {
        Direction {
            source: self.target.clone(),
            target: self.source.clone(),
        }
    }
}

impl From<(LangCode, LangCode)> for Direction {
    fn from((source, target): (LangCode, LangCode)) -> Self {
        Direction { source, target }
    }
}

impl From<Direction> for (LangCode, LangCode) {
    fn from(d: Direction) -> Self {
        (d.source, d.target)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}",
            self.source.as_str().to_uppercase(),
            self.target.as_str().to_uppercase()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub direction: Direction,
    pub pairs: Vec<(String, String)>,
    pub max_batch_tokens: u32,
}

impl ScoreRequest {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::invalid("score request without pairs"));
        }
        if self.pairs.iter().any(|(_, t)| t.is_empty()) {
            return Err(Error::invalid("score request with an empty target"));
        }
        if self.max_batch_tokens == 0 {
            return Err(Error::invalid("max_batch_tokens must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendErrorKind {
    Network,
    RateLimited,
    MalformedResponse,
    BackendReported,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[error("{kind:?}: {message}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn network(message: impl Into<String>) -> Self {
        BackendError {
            kind: BackendErrorKind::Network,
            message: message.into(),
            retryable: true,
        }
    }

    pub fn rate_limited(message: impl Into<String>) -> Self {
        BackendError {
            kind: BackendErrorKind::RateLimited,
            message: message.into(),
            retryable: true,
        }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        BackendError {
            kind: BackendErrorKind::MalformedResponse,
            message: message.into(),
            retryable: false,
        }
    }

    pub fn reported(message: impl Into<String>, retryable: bool) -> Self {
        BackendError {
            kind: BackendErrorKind::BackendReported,
            message: message.into(),
            retryable,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Returns the raw assistant message content.
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

pub trait MtBackend: Send + Sync {
    /// One output per input text, in input order.
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>, BackendError>;
}

pub trait ScoreBackend: Send + Sync {
    /// Average log-probability per target token for each pair (always <= 0).
    fn score_pairs(&self, req: &ScoreRequest) -> Result<Vec<f64>, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(req)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(req)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(req)
    }
}

impl<T: MtBackend + ?Sized> MtBackend for Box<T> {
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>, BackendError> {
        (**self).translate(req)
    }
}

impl<T: ScoreBackend + ?Sized> ScoreBackend for Box<T> {
    fn score_pairs(&self, req: &ScoreRequest) -> Result<Vec<f64>, BackendError> {
        (**self).score_pairs(req)
    }
}

/// Wraps a chat backend and counts calls that reach it.
pub struct CountingChat<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: ChatBackend> CountingChat<B> {
    pub fn new(inner: B) -> Self {
        CountingChat {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: ChatBackend> ChatBackend for CountingChat<B> {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(req)
    }
}

/// Exponential backoff with jitter for retryable backend errors.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32) -> Duration {
        use rand::Rng;
        let exp = self
            .base_delay
            .saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX))
            .min(self.max_delay);
        let jitter_ms = exp.as_millis() as u64 / 2;
        let jitter = if jitter_ms > 0 {
            rand::rng().random_range(0..=jitter_ms)
        } else {
            0
        };
        exp + Duration::from_millis(jitter)
    }

    /// Run `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable && attempt + 1 < attempts => {
                    log::warn!("retrying after {:?} (attempt {}/{})", e.kind, attempt + 1, attempts);
                    std::thread::sleep(self.delay_for(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang(c: &str) -> LangCode {
        LangCode::new(c).unwrap()
    }

    #[test]
    fn chat_request_invariants() {
        assert!(ChatRequest::user("m", "hi", 0.3, 1.0).is_ok());
        assert!(ChatRequest::user("m", "hi", 2.5, 1.0).is_err());
        assert!(ChatRequest::user("m", "hi", 0.0, 0.0).is_err());
        let mut req = ChatRequest::user("m", "hi", 0.0, 1.0).unwrap();
        req.messages.push(ChatMessage {
            role: Role::Assistant,
            content: "x".into(),
        });
        assert!(req.validate().is_err());
        req.messages.clear();
        assert!(req.validate().is_err());
    }

    #[test]
    fn chat_wire_shape() {
        let req = ChatRequest::user("gpt-3.5-turbo", "hi", 0.0, 1.0).unwrap();
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["model"], "gpt-3.5-turbo");
        assert_eq!(v["messages"][0]["role"], "user");
    }

    #[test]
    fn translate_and_score_invariants() {
        let t = TranslateRequest {
            source_lang: lang("de"),
            target_lang: lang("de"),
            texts: vec!["a".into()],
            beam_size: 4,
        };
        assert!(t.validate().is_err());
        let s = ScoreRequest {
            direction: Direction::new(lang("de"), lang("en")),
            pairs: vec![("a".into(), "".into())],
            max_batch_tokens: 2024,
        };
        assert!(s.validate().is_err());
        let v = serde_json::to_value(Direction::new(lang("de"), lang("en"))).unwrap();
        assert_eq!(v, serde_json::json!(["de", "en"]));
    }

    #[test]
    fn rate_limited_is_retryable() {
        assert!(BackendError::rate_limited("x").retryable);
        assert!(!BackendError::malformed("x").retryable);
    }

    #[test]
    fn retry_stops_on_non_retryable() {
        let policy = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        };
        let mut calls = 0;
        let r: Result<(), _> = policy.run(|| {
            calls += 1;
            Err(BackendError::malformed("bad"))
        });
        assert!(r.is_err());
        assert_eq!(calls, 1);

        let mut calls = 0;
        let r: Result<(), _> = policy.run(|| {
            calls += 1;
            Err(BackendError::network("down"))
        });
        assert_eq!(r.unwrap_err().kind, BackendErrorKind::Network);
        assert_eq!(calls, 5);

        let mut calls = 0;
        let r = policy.run(|| {
            calls += 1;
            if calls < 3 {
                Err(BackendError::rate_limited("slow down"))
            } else {
                Ok(calls)
            }
        });
        assert_eq!(r.unwrap(), 3);
    }
}
