//! Model decorators that encode sampling constraints as reference types.
//!
//! * [`Repeatable`]: every `sample(p)` restarts at position 0 of one stored
//!   sequence for `p`, so repeated calls see the same responses. Backed by
//!   an [`InMemoryStore`] or a [`PersistentStore`].
//! * [`Independent`]: every `sample(p)` shares one consumptive cursor, so
//!   repeated calls see fresh responses.
//!
//! Layering them scopes reuse: e.g. `Repeatable::in_memory(Independent(Persistent(base)))`
//! repeats within the in-memory scope and advances across scopes.

mod independent;
mod repeatable;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use independent::Independent;
pub use repeatable::Repeatable;
pub use store::{CacheStore, InMemoryStore, PersistentStore};

use crate::error::Error;

/// How a `Repeatable` uses its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// Read hits, fill misses from the inner model, store the fills.
    ReadWrite,
    /// Never read; every pull goes to the inner model and is appended.
    RecordOnly,
    /// Read-only; a pull beyond the stored length is a replay-miss error.
    ReplayStrict,
    /// Pass-through: no reads, no writes.
    Off,
}

impl CacheMode {
    pub const ALL: [CacheMode; 4] = [
        CacheMode::ReadWrite,
        CacheMode::RecordOnly,
        CacheMode::ReplayStrict,
        CacheMode::Off,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CacheMode::ReadWrite => "read-write",
            CacheMode::RecordOnly => "record-only",
            CacheMode::ReplayStrict => "replay-strict",
            CacheMode::Off => "off",
        }
    }
}

impl fmt::Display for CacheMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CacheMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CacheMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown cache mode {s:?}")))
    }
}
