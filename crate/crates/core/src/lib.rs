//! Response caching for LLM sampling that respects statistical-independence
//! constraints.
//!
//! Sampling a prompt yields a cursor over an infinite lazy sequence of
//! responses. Decorators change *which* sequence a cursor reads:
//! [`caching::Repeatable`] restarts every cursor at the head of a stored
//! sequence, while [`caching::Independent`] hands every caller the same
//! consumptive cursor. Stacking them (with an on-disk store at the bottom)
//! gives repeatability within a scope, independence across scopes, and
//! byte-exact replay across runs.

pub mod caching;
pub mod cli;
pub mod error;
pub mod harness;
pub mod model;
pub mod persistence;
pub mod providers;

pub use caching::{CacheMode, Independent, Repeatable};
pub use error::{Error, Result};
pub use model::{Clock, Model, Origin, Prompt, ResponseRecord, SampleCursor, SamplingParams, Scalar};
pub use persistence::{canonical_key, CacheDir, QueryKey};
pub use providers::{Pricing, ScriptedProvider, UsageReport};
