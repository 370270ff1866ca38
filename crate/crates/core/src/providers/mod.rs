//! Uncached model services: a deterministic scripted provider for tests and
//! scenarios, and an HTTP chat-completions client. Both report usage on
//! every record they produce; independence of samples is the provider's job.

mod http;
mod scripted;
mod usage;

pub use http::{Backoff, HttpProvider, HttpProviderConfig, DEFAULT_API_KEY_ENV, DEFAULT_HTTP_PROVIDER_ID};
pub use scripted::{
    noise, synthetic_tokens, ScriptedProvider, SeededText, TextGenerator, DEFAULT_API_TIME_MS,
    SCRIPTED_MODEL_ID, SCRIPTED_PROVIDER_ID,
};
pub use usage::{cost_of, round_cents, Pricing, UsageReport};
