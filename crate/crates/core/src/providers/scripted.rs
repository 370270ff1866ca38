//! Deterministic provider for tests and scenario runs.
//!
//! Prompts listed in the script yield their scripted texts first; every
//! other position is produced by a [`TextGenerator`] fed with a noise word
//! derived from `sha256(seed, key digest, position)`. The element at
//! `(key, position)` is therefore identical across runs and platforms.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::model::{Clock, Model, Origin, Prompt, ResponseRecord, ResponseSource, SampleCursor, SamplingParams};
use crate::persistence::{canonical_key, QueryKey};

pub const SCRIPTED_PROVIDER_ID: &str = "scripted";
pub const SCRIPTED_MODEL_ID: &str = "scripted-model";
pub const DEFAULT_API_TIME_MS: u64 = 100;

/// Produces the text at a position not covered by the script.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, key: &QueryKey, position: u64, noise: u64) -> String;
}

impl<F> TextGenerator for F
where
    F: Fn(&QueryKey, u64, u64) -> String + Send + Sync,
{
    fn generate(&self, key: &QueryKey, position: u64, noise: u64) -> String {
        self(key, position, noise)
    }
}

/// Default generator: a hex rendering of the noise word.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeededText;

impl TextGenerator for SeededText {
    fn generate(&self, _key: &QueryKey, _position: u64, noise: u64) -> String {
        format!("sample-{noise:016x}")
    }
}

/// The pseudo-random word for `(seed, digest, position)`.
pub fn noise(seed: u64, digest: &str, position: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"iidcache-scripted/v1");
    h.update(seed.to_le_bytes());
    h.update(digest.as_bytes());
    h.update(position.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

/// `ceil(bytes / 4)`, the synthetic token model.
pub fn synthetic_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

#[derive(Clone)]
struct ScriptConfig {
    provider_id: String,
    params: SamplingParams,
    script: HashMap<String, Vec<String>>,
    seed: u64,
    generator: Arc<dyn TextGenerator>,
    api_time_ms: u64,
    clock: Clock,
}

/// Uncached, deterministic model service with per-key call counters.
///
/// Clones share their counters.
#[derive(Clone)]
pub struct ScriptedProvider {
    config: Arc<ScriptConfig>,
    counters: Arc<Mutex<HashMap<QueryKey, u64>>>,
}

impl fmt::Debug for ScriptedProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptedProvider")
            .field("provider_id", &self.config.provider_id)
            .field("seed", &self.config.seed)
            .field("scripted_prompts", &self.config.script.len())
            .field("total_calls", &self.total_calls())
            .finish()
    }
}

impl ScriptedProvider {
    pub fn new(seed: u64) -> Self {
        ScriptedProvider {
            config: Arc::new(ScriptConfig {
                provider_id: SCRIPTED_PROVIDER_ID.to_owned(),
                params: SamplingParams::new(SCRIPTED_MODEL_ID),
                script: HashMap::new(),
                seed,
                generator: Arc::new(SeededText),
                api_time_ms: DEFAULT_API_TIME_MS,
                clock: Clock::System,
            }),
            counters: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    fn config_mut(&mut self) -> &mut ScriptConfig {
        Arc::make_mut(&mut self.config)
    }

    /// Scripted texts for `prompt`, served at positions `0..texts.len()`.
    pub fn with_script<I, S>(mut self, prompt: impl Into<String>, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let texts = texts.into_iter().map(Into::into).collect();
        self.config_mut().script.insert(prompt.into(), texts);
        self
    }

    pub fn with_generator(mut self, generator: impl TextGenerator + 'static) -> Self {
        self.config_mut().generator = Arc::new(generator);
        self
    }

    pub fn with_params(mut self, params: SamplingParams) -> Self {
        self.config_mut().params = params;
        self
    }

    pub fn with_provider_id(mut self, provider_id: impl Into<String>) -> Self {
        self.config_mut().provider_id = provider_id.into();
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.config_mut().clock = clock;
        self
    }

    pub fn with_api_time_ms(mut self, api_time_ms: u64) -> Self {
        self.config_mut().api_time_ms = api_time_ms;
        self
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn params(&self) -> &SamplingParams {
        &self.config.params
    }

    fn counters(&self) -> MutexGuard<'_, HashMap<QueryKey, u64>> {
        self.counters.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Elements served for `prompt` so far.
    pub fn calls(&self, prompt: &Prompt) -> u64 {
        let key = self.query_key(prompt);
        self.counters().get(&key).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> u64 {
        self.counters().values().sum()
    }

    /// Elements served across every key whose prompt satisfies `pred`.
    pub fn calls_where(&self, pred: impl Fn(&str) -> bool) -> u64 {
        self.counters()
            .iter()
            .filter(|(k, _)| pred(k.prompt()))
            .map(|(_, n)| n)
            .sum()
    }

    pub fn reset_counters(&self) {
        self.counters().clear();
    }

    /// The element at `(prompt, position)`, without touching counters.
    pub fn text_at(&self, prompt: &Prompt, position: u64) -> String {
        text_at(&self.config, &self.query_key(prompt), position)
    }

    /// A stored-form record for `text` under this provider's token model.
    pub fn record_for(&self, prompt: &Prompt, text: impl Into<String>) -> ResponseRecord {
        make_record(&self.config, prompt.as_str(), text.into())
    }
}

fn text_at(config: &ScriptConfig, key: &QueryKey, position: u64) -> String {
    config
        .script
        .get(key.prompt())
        .and_then(|texts| texts.get(position as usize))
        .cloned()
        .unwrap_or_else(|| {
            let noise = noise(config.seed, key.digest(), position);
            config.generator.generate(key, position, noise)
        })
}

fn make_record(config: &ScriptConfig, prompt: &str, text: String) -> ResponseRecord {
    ResponseRecord {
        prompt_tokens: synthetic_tokens(prompt),
        completion_tokens: synthetic_tokens(&text),
        api_time_ms: config.api_time_ms,
        provider_id: config.provider_id.clone(),
        created_at: config.clock.now(),
        origin: Origin::Provider,
        text,
    }
}

impl Model for ScriptedProvider {
    fn query_key(&self, prompt: &Prompt) -> QueryKey {
        canonical_key(&self.config.provider_id, &self.config.params, prompt.as_str())
    }

    fn sample(&self, prompt: &Prompt) -> SampleCursor {
        let key = self.query_key(prompt);
        SampleCursor::new(
            key.clone(),
            ScriptedSequence {
                config: Arc::clone(&self.config),
                counters: Arc::clone(&self.counters),
                key,
            },
        )
    }
}

struct ScriptedSequence {
    config: Arc<ScriptConfig>,
    counters: Arc<Mutex<HashMap<QueryKey, u64>>>,
    key: QueryKey,
}

impl ResponseSource for ScriptedSequence {
    fn pull(&mut self, position: u64) -> Result<ResponseRecord> {
        let text = text_at(&self.config, &self.key, position);
        *self
            .counters
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .entry(self.key.clone())
            .or_insert(0) += 1;
        Ok(make_record(&self.config, self.key.prompt(), text))
    }
}
