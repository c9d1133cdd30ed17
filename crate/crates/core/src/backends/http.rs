//! JSON-over-HTTP clients.
//!
//! The chat client speaks the OpenAI chat-completions shape. The MT and
//! scorer clients POST the request types verbatim to `{base}/translate` and
//! `{base}/score` and expect `{"translations": [...]}` and
//! `{"scores": [...]}` back.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, ChatBackend, ChatRequest, MtBackend, RateLimiter, RetryPolicy, ScoreBackend,
    ScoreRequest, TranslateRequest,
};

pub const ENV_LLM_URL: &str = "TERMWEAVE_LLM_URL";
pub const ENV_LLM_API_KEY: &str = "TERMWEAVE_LLM_API_KEY";
pub const ENV_MT_URL: &str = "TERMWEAVE_MT_URL";
pub const ENV_SCORER_URL: &str = "TERMWEAVE_SCORER_URL";

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Requests per second and burst size; `None` disables throttling.
    pub rate_limit: Option<(f64, u32)>,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            rate_limit: None,
        }
    }
}

struct JsonClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    bearer: Option<String>,
}

impl JsonClient {
    fn new(opts: &HttpOptions, bearer: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(opts.timeout))
            .build()
            .into();
        JsonClient {
            agent,
            retry: opts.retry.clone(),
            limiter: opts.rate_limit.map(|(r, b)| RateLimiter::new(r, b)),
            bearer,
        }
    }

    fn post_once(&self, url: &str, body: &str) -> Result<String, BackendError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json; charset=utf-8");
        if let Some(key) = &self.bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| BackendError::network(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::network(format!("{url}: reading body: {e}")))?;
        match status {
            200..=299 => Ok(text),
            429 => Err(BackendError::rate_limited(format!("{url}: HTTP 429"))),
            500..=599 => Err(BackendError::reported(format!("{url}: HTTP {status}: {text}"), true)),
            _ => Err(BackendError::reported(format!("{url}: HTTP {status}: {text}"), false)),
        }
    }

    fn post_json<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, body: &Req) -> Result<Resp, BackendError> {
        let body = serde_json::to_string(body)
            .map_err(|e| BackendError::malformed(format!("encoding request: {e}")))?;
        let text = self.retry.run(|| self.post_once(url, &body))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::malformed(format!("{url}: unexpected response body: {e}")))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

/// OpenAI-compatible chat-completions client.
pub struct HttpChat {
    url: String,
    client: JsonClient,
}

impl HttpChat {
    pub fn new(url: impl Into<String>, api_key: Option<String>, opts: &HttpOptions) -> Self {
        HttpChat {
            url: url.into(),
            client: JsonClient::new(opts, api_key),
        }
    }

    /// Endpoint from `TERMWEAVE_LLM_URL`, key from `TERMWEAVE_LLM_API_KEY`.
    pub fn from_env(opts: &HttpOptions) -> Result<Self, BackendError> {
        let url = std::env::var(ENV_LLM_URL)
            .map_err(|_| BackendError::reported(format!("{ENV_LLM_URL} is not set"), false))?;
        Ok(HttpChat::new(url, std::env::var(ENV_LLM_API_KEY).ok(), opts))
    }
}

impl ChatBackend for HttpChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let resp: ChatResponse = self.client.post_json(&self.url, req)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::malformed("response has no choices[0].message.content"))
    }
}

#[derive(Deserialize)]
struct TranslateResponse {
    translations: Vec<String>,
}

pub struct HttpMt {
    url: String,
    client: JsonClient,
}

impl HttpMt {
    pub fn new(base_url: &str, opts: &HttpOptions) -> Self {
        HttpMt {
            url: format!("{}/translate", base_url.trim_end_matches('/')),
            client: JsonClient::new(opts, None),
        }
    }

    pub fn from_env(opts: &HttpOptions) -> Result<Self, BackendError> {
        let url = std::env::var(ENV_MT_URL)
            .map_err(|_| BackendError::reported(format!("{ENV_MT_URL} is not set"), false))?;
        Ok(HttpMt::new(&url, opts))
    }
}

impl MtBackend for HttpMt {
    fn translate(&self, req: &TranslateRequest) -> Result<Vec<String>, BackendError> {
        let resp: TranslateResponse = self.client.post_json(&self.url, req)?;
        if resp.translations.len() != req.texts.len() {
            return Err(BackendError::malformed(format!(
                "expected {} translations, got {}",
                req.texts.len(),
                resp.translations.len()
            )));
        }
        Ok(resp.translations)
    }
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

pub struct HttpScorer {
    url: String,
    client: JsonClient,
}

impl HttpScorer {
    pub fn new(base_url: &str, opts: &HttpOptions) -> Self {
        HttpScorer {
            url: format!("{}/score", base_url.trim_end_matches('/')),
            client: JsonClient::new(opts, None),
        }
    }

    pub fn from_env(opts: &HttpOptions) -> Result<Self, BackendError> {
        let url = std::env::var(ENV_SCORER_URL)
            .map_err(|_| BackendError::reported(format!("{ENV_SCORER_URL} is not set"), false))?;
        Ok(HttpScorer::new(&url, opts))
    }
}

impl ScoreBackend for HttpScorer {
    fn score_pairs(&self, req: &ScoreRequest) -> Result<Vec<f64>, BackendError> {
        let resp: ScoreResponse = self.client.post_json(&self.url, req)?;
        if resp.scores.len() != req.pairs.len() {
            return Err(BackendError::malformed(format!(
                "expected {} scores, got {}",
                req.pairs.len(),
                resp.scores.len()
            )));
        }
        if let Some(bad) = resp.scores.iter().find(|s| !(s.is_finite() && **s <= 0.0)) {
            return Err(BackendError::malformed(format!("score {bad} is not a log-probability")));
        }
        Ok(resp.scores)
    }
}
