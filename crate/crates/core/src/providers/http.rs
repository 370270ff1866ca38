//! Chat-completions client.
//!
//! Each pull issues one `POST {base_url}/chat/completions`; batches ask for
//! up to `batch_limit` choices per request via `n`. Transient failures (5xx,
//! 429, timeouts, connection errors) are retried with exponential backoff.
//! Reported `api_time_ms` is wall time from the first attempt to the final
//! response, retries and backoff included.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{Clock, Model, Origin, Prompt, ResponseRecord, ResponseSource, SampleCursor, SamplingParams, Scalar};
use crate::persistence::{canonical_key, QueryKey};
use crate::providers::usage::Pricing;

pub const DEFAULT_HTTP_PROVIDER_ID: &str = "chat-completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub initial_ms: u64,
    pub multiplier: f64,
    /// Fraction of the nominal delay added or removed at random, in `[0, 1]`.
    pub jitter: f64,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            initial_ms: 500,
            multiplier: 2.0,
            jitter: 0.1,
        }
    }
}

impl Backoff {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let nominal = self.initial_ms as f64 * self.multiplier.powi(retry as i32);
        let spread = if self.jitter > 0.0 {
            rand::thread_rng().gen_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        Duration::from_millis((nominal * (1.0 + spread)).max(0.0).round() as u64)
    }
}

#[derive(Clone)]
pub struct HttpProviderConfig {
    pub provider_id: String,
    pub base_url: String,
    pub api_key: String,
    pub params: SamplingParams,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff: Backoff,
    /// Largest `n` sent in one request.
    pub batch_limit: u32,
    pub pricing: Pricing,
    pub clock: Clock,
}

impl fmt::Debug for HttpProviderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProviderConfig")
            .field("provider_id", &self.provider_id)
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("params", &self.params)
            .field("timeout_ms", &self.timeout_ms)
            .field("max_retries", &self.max_retries)
            .field("backoff", &self.backoff)
            .field("batch_limit", &self.batch_limit)
            .finish()
    }
}

impl HttpProviderConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, params: SamplingParams) -> Self {
        HttpProviderConfig {
            provider_id: DEFAULT_HTTP_PROVIDER_ID.to_owned(),
            base_url: base_url.into(),
            api_key: api_key.into(),
            params,
            timeout_ms: 60_000,
            max_retries: 3,
            backoff: Backoff::default(),
            batch_limit: 8,
            pricing: Pricing::default(),
            clock: Clock::System,
        }
    }

    /// Reads the API key from the environment variable `var`.
    pub fn from_env(base_url: impl Into<String>, var: &str, params: SamplingParams) -> Result<Self> {
        let key = std::env::var(var)
            .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?;
        Ok(Self::new(base_url, key, params))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be > 0".into()));
        }
        if self.batch_limit == 0 {
            return Err(Error::Config("batch_limit must be >= 1".into()));
        }
        if self.pricing.prompt_per_million.is_sign_negative()
            || self.pricing.completion_per_million.is_sign_negative()
        {
            return Err(Error::Config("prices must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.backoff.jitter) || self.backoff.multiplier < 1.0 {
            return Err(Error::Config(
                "backoff jitter must lie in [0, 1] and multiplier be >= 1".into(),
            ));
        }
        if self.api_key.is_empty() {
            return Err(Error::Config("api key is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<ChatUsage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

struct Shared {
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
    requests: AtomicU64,
}

/// Uncached model service over an OpenAI-compatible endpoint.
#[derive(Clone)]
pub struct HttpProvider {
    shared: Arc<Shared>,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("cannot build http client: {e}")))?;
        Ok(HttpProvider {
            shared: Arc::new(Shared {
                config,
                client,
                requests: AtomicU64::new(0),
            }),
        })
    }

    pub fn config(&self) -> &HttpProviderConfig {
        &self.shared.config
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.shared.requests.load(Ordering::Relaxed)
    }
}

impl Model for HttpProvider {
    fn query_key(&self, prompt: &Prompt) -> QueryKey {
        let c = &self.shared.config;
        canonical_key(&c.provider_id, &c.params, prompt.as_str())
    }

    fn sample(&self, prompt: &Prompt) -> SampleCursor {
        SampleCursor::new(
            self.query_key(prompt),
            HttpSequence {
                shared: Arc::clone(&self.shared),
                prompt: prompt.clone(),
            },
        )
    }
}

struct HttpSequence {
    shared: Arc<Shared>,
    prompt: Prompt,
}

enum Failure {
    Retryable(Error),
    Fatal(Error),
}

fn scalar_json(value: &Scalar) -> Value {
    match value {
        Scalar::Bool(b) => json!(b),
        Scalar::Int(i) => json!(i),
        Scalar::Float(x) => json!(x),
        Scalar::Str(s) => json!(s),
    }
}

impl Shared {
    fn request_body(&self, prompt: &str, n: u32) -> Value {
        let p = &self.config.params;
        let mut body = Map::new();
        for (name, value) in &p.extra {
            body.insert(name.clone(), scalar_json(value));
        }
        body.insert("model".into(), json!(p.model_id));
        body.insert(
            "messages".into(),
            json!([{ "role": "user", "content": prompt }]),
        );
        body.insert("temperature".into(), json!(p.temperature));
        body.insert("top_p".into(), json!(p.top_p));
        body.insert("max_tokens".into(), json!(p.max_tokens));
        if n > 1 {
            body.insert("n".into(), json!(n));
        }
        Value::Object(body)
    }

    fn send_once(&self, body: &Value, attempts: u32) -> std::result::Result<ChatResponse, Failure> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        self.requests.fetch_add(1, Ordering::Relaxed);
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    Failure::Retryable(Error::Timeout { attempts })
                } else {
                    Failure::Retryable(Error::ProviderUnavailable(e.to_string()))
                }
            })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                Failure::Retryable(Error::Timeout { attempts })
            } else {
                Failure::Retryable(Error::ProviderUnavailable(e.to_string()))
            }
        })?;
        match status.as_u16() {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Failure::Fatal(Error::MalformedResponse(e.to_string()))),
            401 | 403 => Err(Failure::Fatal(Error::AuthFailure {
                status: status.as_u16(),
            })),
            429 => Err(Failure::Retryable(Error::RateLimited { attempts })),
            500..=599 => Err(Failure::Retryable(Error::ProviderUnavailable(format!(
                "HTTP {status}: {text}"
            )))),
            code => Err(Failure::Fatal(Error::RequestRejected {
                status: code,
                body: text,
            })),
        }
    }

    /// One logical request for `n` choices, with retries.
    fn complete(&self, prompt: &str, n: u32) -> Result<Vec<ResponseRecord>> {
        let body = self.request_body(prompt, n);
        let started = Instant::now();
        let mut retry = 0;
        let response = loop {
            match self.send_once(&body, retry + 1) {
                Ok(r) => break r,
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) => {
                    if retry >= self.config.max_retries {
                        return Err(e);
                    }
                    thread::sleep(self.config.backoff.delay(retry));
                    retry += 1;
                }
            }
        };
        let api_time_ms = started.elapsed().as_millis() as u64;

        if response.choices.len() != n as usize {
            return Err(Error::MalformedResponse(format!(
                "requested {n} choices, received {}",
                response.choices.len()
            )));
        }
        let usage = response.usage.ok_or_else(|| {
            Error::MalformedResponse("response carries no usage block".into())
        })?;
        let created_at = self.config.clock.now();
        // Usage is reported per request: the prompt is charged once, on the
        // first choice; completion tokens are spread across choices.
        let share = usage.completion_tokens / n as u64;
        let remainder = usage.completion_tokens % n as u64;
        response
            .choices
            .into_iter()
            .enumerate()
            .map(|(i, choice)| {
                let text = choice.message.content.ok_or_else(|| {
                    Error::MalformedResponse(format!("choice {i} has no message content"))
                })?;
                let first = i == 0;
                Ok(ResponseRecord {
                    text,
                    prompt_tokens: if first { usage.prompt_tokens } else { 0 },
                    completion_tokens: share + u64::from((i as u64) < remainder),
                    api_time_ms: if first { api_time_ms } else { 0 },
                    provider_id: self.config.provider_id.clone(),
                    created_at,
                    origin: Origin::Provider,
                })
            })
            .collect()
    }
}

impl ResponseSource for HttpSequence {
    fn pull(&mut self, _position: u64) -> Result<ResponseRecord> {
        Ok(self
            .shared
            .complete(self.prompt.as_str(), 1)?
            .pop()
            .expect("one choice"))
    }

    fn pull_batch(&mut self, _position: u64, n: u64) -> Result<Vec<ResponseRecord>> {
        let limit = u64::from(self.shared.config.batch_limit);
        let mut out = Vec::with_capacity(n as usize);
        let mut remaining = n;
        while remaining > 0 {
            let chunk = remaining.min(limit);
            out.extend(self.shared.complete(self.prompt.as_str(), chunk as u32)?);
            remaining -= chunk;
        }
        Ok(out)
    }
}
