//! The `Model` abstraction: sampling a prompt yields a cursor over a
//! conceptually infinite, lazily materialized sequence of i.i.d. responses.
//!
//! Every implementation in this crate (providers and decorators) hands out
//! [`SampleCursor`]s. A cursor is the only way responses are consumed; which
//! sequence it reads and where it starts is up to the implementation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persistence::QueryKey;

/// A fully rendered prompt. Identity is byte-exact; no normalization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Prompt(String);

impl Prompt {
    pub fn new(text: impl Into<String>) -> Self {
        Prompt(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Prompt {
    fn from(s: &str) -> Self {
        Prompt(s.to_owned())
    }
}

impl From<String> for Prompt {
    fn from(s: String) -> Self {
        Prompt(s)
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A provider-specific sampling knob value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

/// Sampling settings. Every field participates in the distribution identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub extra: BTreeMap<String, Scalar>,
}

impl SamplingParams {
    pub fn new(model_id: impl Into<String>) -> Self {
        SamplingParams {
            model_id: model_id.into(),
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 256,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_top_p(mut self, top_p: f64) -> Self {
        self.top_p = top_p;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_extra(mut self, name: impl Into<String>, value: Scalar) -> Self {
        self.extra.insert(name.into(), value);
        self
    }

    /// Checks `temperature >= 0`, `0 < top_p <= 1`, `max_tokens >= 1` and
    /// that every float is finite.
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidParams("max_tokens must be >= 1".into()));
        }
        for (name, value) in &self.extra {
            if let Scalar::Float(x) = value {
                if !x.is_finite() {
                    return Err(Error::InvalidParams(format!(
                        "extra parameter {name:?} is not finite"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Where a record handed to the caller came from during this pull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Origin {
    /// A provider was contacted to produce this element.
    Provider,
    /// Served from a cache layer; carries no usage.
    #[default]
    Cache,
}

/// One sampled completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub api_time_ms: u64,
    pub provider_id: String,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
    /// Not persisted; records read back from a store are `Origin::Cache`.
    #[serde(skip)]
    pub origin: Origin,
}

impl ResponseRecord {
    /// The record as served from a cache: same text and provenance, zero usage.
    pub fn as_cache_hit(&self) -> ResponseRecord {
        ResponseRecord {
            prompt_tokens: 0,
            completion_tokens: 0,
            api_time_ms: 0,
            origin: Origin::Cache,
            ..self.clone()
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// Equality on the replay surface: everything except `created_at` and origin.
    pub fn replay_eq(&self, other: &ResponseRecord) -> bool {
        self.text == other.text
            && self.prompt_tokens == other.prompt_tokens
            && self.completion_tokens == other.completion_tokens
            && self.api_time_ms == other.api_time_ms
            && self.provider_id == other.provider_id
    }
}

/// Millisecond-precision RFC 3339 timestamps with a fixed `Z` suffix, so a
/// parsed record re-serializes to the same bytes.
pub(crate) mod timestamp {
    use chrono::{DateTime, NaiveDateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    const FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format(FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&raw, FORMAT)
            .map(|naive| naive.and_utc())
            .map_err(serde::de::Error::custom)
    }
}

/// Source of `created_at` stamps for freshly produced records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Clock {
    #[default]
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    /// A clock pinned to the Unix epoch, for byte-identical re-recording.
    pub fn deterministic() -> Self {
        Clock::Fixed(Utc.timestamp_opt(0, 0).unwrap())
    }

    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => {
                let now = Utc::now();
                let millis = now.timestamp_millis();
                Utc.timestamp_millis_opt(millis).unwrap()
            }
            Clock::Fixed(t) => *t,
        }
    }
}

/// Produces the elements behind a cursor.
///
/// `position` is the index of the element requested. Implementations must
/// not advance any external state they expose on failure beyond what is
/// safe to re-observe (a store append of an already-served element is fine).
pub trait ResponseSource: Send {
    fn pull(&mut self, position: u64) -> Result<ResponseRecord>;

    fn pull_batch(&mut self, position: u64, n: u64) -> Result<Vec<ResponseRecord>> {
        (0..n).map(|i| self.pull(position + i)).collect()
    }
}

struct CursorState {
    key: QueryKey,
    position: u64,
    source: Box<dyn ResponseSource>,
}

/// A consuming position over a response sequence.
///
/// Cursors are deliberately not `Clone`: duplicating the consumption state
/// would let two holders read the same position of a consumptive sequence.
/// `Independent` hands out aliases of one cursor; pulling through any alias
/// advances all of them.
pub struct SampleCursor {
    state: Arc<Mutex<CursorState>>,
}

impl SampleCursor {
    pub fn new(key: QueryKey, source: impl ResponseSource + 'static) -> Self {
        SampleCursor {
            state: Arc::new(Mutex::new(CursorState {
                key,
                position: 0,
                source: Box::new(source),
            })),
        }
    }

    /// Another handle onto the same consumption state.
    pub(crate) fn alias(&self) -> SampleCursor {
        SampleCursor {
            state: Arc::clone(&self.state),
        }
    }

    /// True when both handles share one consumption state.
    pub fn is_alias_of(&self, other: &SampleCursor) -> bool {
        Arc::ptr_eq(&self.state, &other.state)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, CursorState> {
        self.state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn key(&self) -> QueryKey {
        self.lock().key.clone()
    }

    /// Index of the next element this cursor will yield.
    pub fn position(&self) -> u64 {
        self.lock().position
    }

    /// Pulls one element. On error the position is left unchanged, so a
    /// retry re-attempts the same position.
    pub fn next_record(&self) -> Result<ResponseRecord> {
        let mut state = self.lock();
        let position = state.position;
        let record = state.source.pull(position)?;
        state.position += 1;
        Ok(record)
    }

    /// Pulls exactly `n` elements, letting the source satisfy them in one
    /// batch. All-or-nothing with respect to the cursor position.
    pub fn take(&self, n: u64) -> Result<Vec<ResponseRecord>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut state = self.lock();
        let position = state.position;
        let records = state.source.pull_batch(position, n)?;
        debug_assert_eq!(records.len() as u64, n);
        state.position += n;
        Ok(records)
    }

    /// An endless iterator of pulls through this cursor.
    pub fn records(&self) -> impl Iterator<Item = Result<ResponseRecord>> + '_ {
        std::iter::repeat_with(move || self.next_record())
    }

    /// Convenience: the texts of the next `n` elements.
    pub fn take_texts(&self, n: u64) -> Result<Vec<String>> {
        Ok(self.take(n)?.into_iter().map(|r| r.text).collect())
    }
}

impl fmt::Debug for SampleCursor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let state = self.lock();
        f.debug_struct("SampleCursor")
            .field("digest", &state.key.digest())
            .field("position", &state.position)
            .finish()
    }
}

/// A sampler over prompts.
///
/// `sample` must be cheap: creating a cursor performs no provider calls and
/// no cache writes. Elements within one cursor's sequence are independent.
pub trait Model: Send + Sync {
    /// The distribution identity this model uses for `prompt`.
    fn query_key(&self, prompt: &Prompt) -> QueryKey;

    fn sample(&self, prompt: &Prompt) -> SampleCursor;

    /// Observationally identical to `self.sample(prompt).take(n)`.
    fn sample_batch(&self, prompt: &Prompt, n: u64) -> Result<Vec<ResponseRecord>> {
        if n == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        self.sample(prompt).take(n)
    }
}

impl<M: Model + ?Sized> Model for Arc<M> {
    fn query_key(&self, prompt: &Prompt) -> QueryKey {
        (**self).query_key(prompt)
    }

    fn sample(&self, prompt: &Prompt) -> SampleCursor {
        (**self).sample(prompt)
    }

    fn sample_batch(&self, prompt: &Prompt, n: u64) -> Result<Vec<ResponseRecord>> {
        (**self).sample_batch(prompt, n)
    }
}

impl<M: Model + ?Sized> Model for Box<M> {
    fn query_key(&self, prompt: &Prompt) -> QueryKey {
        (**self).query_key(prompt)
    }

    fn sample(&self, prompt: &Prompt) -> SampleCursor {
        (**self).sample(prompt)
    }

    fn sample_batch(&self, prompt: &Prompt, n: u64) -> Result<Vec<ResponseRecord>> {
        (**self).sample_batch(prompt, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persistence::canonical_key;

    struct Counting;

    impl ResponseSource for Counting {
        fn pull(&mut self, position: u64) -> Result<ResponseRecord> {
            if position == 3 {
                return Err(Error::ProviderUnavailable("flaky".into()));
            }
            Ok(ResponseRecord {
                text: position.to_string(),
                prompt_tokens: 1,
                completion_tokens: 1,
                api_time_ms: 0,
                provider_id: "test".into(),
                created_at: Clock::deterministic().now(),
                origin: Origin::Provider,
            })
        }
    }

    fn cursor() -> SampleCursor {
        let key = canonical_key("test", &SamplingParams::new("m"), "p");
        SampleCursor::new(key, Counting)
    }

    #[test]
    fn take_advances_position() {
        let c = cursor();
        assert!(c.take(0).unwrap().is_empty());
        assert_eq!(c.position(), 0);
        assert_eq!(c.take_texts(2).unwrap(), ["0", "1"]);
        assert_eq!(c.position(), 2);
    }

    #[test]
    fn records_iterator_pulls_lazily() {
        let c = cursor();
        let texts: Vec<String> = c.records().take(2).map(|r| r.unwrap().text).collect();
        assert_eq!(texts, ["0", "1"]);
        assert_eq!(c.position(), 2);
    }

    #[test]
    fn failed_pull_does_not_advance() {
        let c = cursor();
        c.take(3).unwrap();
        assert!(c.next_record().is_err());
        assert_eq!(c.position(), 3);
        assert!(c.next_record().is_err());
        assert_eq!(c.position(), 3);
    }

    #[test]
    fn failed_batch_is_all_or_nothing() {
        let c = cursor();
        c.take(1).unwrap();
        assert!(c.take(5).is_err());
        assert_eq!(c.position(), 1);
    }

    #[test]
    fn alias_shares_position() {
        let a = cursor();
        let b = a.alias();
        assert!(a.is_alias_of(&b));
        a.next_record().unwrap();
        assert_eq!(b.next_record().unwrap().text, "1");
        assert_eq!(a.position(), 2);
        assert!(!a.is_alias_of(&cursor()));
    }

    #[test]
    fn params_validation() {
        assert!(SamplingParams::new("m").validate().is_ok());
        assert!(SamplingParams::new("m").with_temperature(-0.1).validate().is_err());
        assert!(SamplingParams::new("m").with_top_p(0.0).validate().is_err());
        assert!(SamplingParams::new("m").with_top_p(1.5).validate().is_err());
        assert!(SamplingParams::new("m").with_max_tokens(0).validate().is_err());
        assert!(SamplingParams::new("m")
            .with_extra("x", Scalar::Float(f64::NAN))
            .validate()
            .is_err());
    }

    #[test]
    fn record_line_reserializes_identically() {
        let rec = ResponseRecord {
            text: "line\nbreak \"quoted\"".into(),
            prompt_tokens: 3,
            completion_tokens: 4,
            api_time_ms: 17,
            provider_id: "scripted".into(),
            created_at: Clock::System.now(),
            origin: Origin::Provider,
        };
        let line = serde_json::to_string(&rec).unwrap();
        let back: ResponseRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.origin, Origin::Cache);
        assert_eq!(serde_json::to_string(&back).unwrap(), line);
        assert_eq!(back.created_at, rec.created_at);
    }

    #[test]
    fn cache_hit_zeroes_usage() {
        let c = cursor();
        let hit = c.next_record().unwrap().as_cache_hit();
        assert_eq!(hit.total_tokens(), 0);
        assert_eq!(hit.api_time_ms, 0);
        assert_eq!(hit.origin, Origin::Cache);
    }
}
