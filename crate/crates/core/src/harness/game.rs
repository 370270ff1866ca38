//! The guessing-game scenario: nested user × interval loops drawing one
//! number per round, under three layerings of the caching decorators.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::caching::{CacheMode, Independent, Repeatable};
use crate::error::{Error, Result};
use crate::harness::transcript::RunTranscript;
use crate::model::{Model, Prompt, ResponseRecord, SampleCursor};
use crate::persistence::CacheDir;
use crate::providers::ScriptedProvider;

pub const GUESS_TEMPLATE: &str = "Choose an integer from {interval} for {user} to guess.";

pub const EXAMPLE_USERS: [&str; 3] = ["Alice", "Bob", "Alice"];
pub const EXAMPLE_INTERVALS: [&str; 3] = ["[1, 1000]", "[1001, 2000]", "[1, 1000]"];

/// Pre-seeded sequences: `(user, interval, responses)`.
pub const SEEDED_LISTING: [(&str, &str, &[&str]); 4] = [
    ("Alice", "[1, 1000]", &["2", "68", "109", "12"]),
    ("Bob", "[1, 1000]", &["297", "573"]),
    ("Alice", "[1001, 2000]", &["1393", "1002"]),
    ("Bob", "[1001, 2000]", &["1740"]),
];

pub fn guess_prompt(user: &str, interval: &str) -> Prompt {
    Prompt::new(
        GUESS_TEMPLATE
            .replace("{interval}", interval)
            .replace("{user}", user),
    )
}

/// Writes [`SEEDED_LISTING`] into a fresh cache at `dir`, keyed for `provider`.
/// Records carry the provider's synthetic usage and clock.
pub fn seed_example_cache(dir: impl AsRef<Path>, provider: &ScriptedProvider) -> Result<()> {
    let mut cache = CacheDir::open(dir)?;
    if !cache.is_empty() {
        return Err(Error::DestinationNotEmpty(cache.root().to_path_buf()));
    }
    for (user, interval, texts) in SEEDED_LISTING {
        let prompt = guess_prompt(user, interval);
        let key = provider.query_key(&prompt);
        for text in texts {
            cache.append_response(&key, &provider.record_for(&prompt, *text))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layering {
    /// `Persistent(base)`: the same number in every round.
    PersistentOnly,
    /// `Independent(Persistent(base))`: a fresh number every round.
    IndependentOverPersistent,
    /// `InMemory(Independent(Persistent(base)))`, one `InMemory` per user:
    /// repeated within a game, independent across games.
    ScopedInMemoryOverIndependentOverPersistent,
}

impl Layering {
    pub const ALL: [Layering; 3] = [
        Layering::PersistentOnly,
        Layering::IndependentOverPersistent,
        Layering::ScopedInMemoryOverIndependentOverPersistent,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Layering::PersistentOnly => "persistent-only",
            Layering::IndependentOverPersistent => "independent-over-persistent",
            Layering::ScopedInMemoryOverIndependentOverPersistent => {
                "scoped-in-memory-over-independent-over-persistent"
            }
        }
    }
}

impl fmt::Display for Layering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layering::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown layering {s:?}")))
    }
}

fn default_mode() -> CacheMode {
    CacheMode::ReadWrite
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessingGameConfig {
    pub users: Vec<String>,
    pub intervals: Vec<String>,
    pub layering: Layering,
    #[serde(default)]
    pub cache_dir: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: CacheMode,
}

impl GuessingGameConfig {
    /// The three-user, three-interval setup of the worked examples.
    pub fn example(layering: Layering, cache_dir: impl Into<PathBuf>) -> Self {
        GuessingGameConfig {
            users: EXAMPLE_USERS.map(String::from).to_vec(),
            intervals: EXAMPLE_INTERVALS.map(String::from).to_vec(),
            layering,
            cache_dir: cache_dir.into(),
            mode: CacheMode::ReadWrite,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() || self.intervals.is_empty() {
            return Err(Error::Config("users and intervals must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameOutcome {
    pub responses: Vec<String>,
    pub transcript: RunTranscript,
}

fn draw_one(cursor: &SampleCursor) -> Result<(u64, ResponseRecord)> {
    let position = cursor.position();
    Ok((position, cursor.next_record()?))
}

/// Runs the nested loops and returns one response per (user, interval) round.
pub fn run_guessing_game(cfg: &GuessingGameConfig, base: Arc<dyn Model>) -> Result<GameOutcome> {
    cfg.validate()?;
    let persistent = Arc::new(Repeatable::persistent(base, &cfg.cache_dir, cfg.mode)?);
    let mut transcript = RunTranscript::new();
    let mut responses = Vec::new();

    let mut round = |model: &dyn Model, layer: &str, user: &str, interval: &str| -> Result<()> {
        let prompt = guess_prompt(user, interval);
        let (position, rec) = draw_one(&model.sample(&prompt))?;
        transcript.record_pulls(layer, prompt.as_str(), position, std::slice::from_ref(&rec));
        transcript.push_output(format!("{user} {interval}"), rec.text.clone());
        responses.push(rec.text);
        Ok(())
    };

    match cfg.layering {
        Layering::PersistentOnly => {
            for user in &cfg.users {
                for interval in &cfg.intervals {
                    round(persistent.as_ref(), "persistent", user, interval)?;
                }
            }
        }
        Layering::IndependentOverPersistent => {
            let independent = Independent::new(Arc::clone(&persistent));
            for user in &cfg.users {
                for interval in &cfg.intervals {
                    round(&independent, "independent", user, interval)?;
                }
            }
        }
        Layering::ScopedInMemoryOverIndependentOverPersistent => {
            let independent = Arc::new(Independent::new(Arc::clone(&persistent)));
            for user in &cfg.users {
                let scoped = Repeatable::in_memory(Arc::clone(&independent));
                for interval in &cfg.intervals {
                    round(&scoped, "in-memory", user, interval)?;
                }
            }
        }
    }
    Ok(GameOutcome {
        responses,
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Clock;

    pub(crate) const GOLDEN: [(Layering, [&str; 9]); 3] = [
        (
            Layering::PersistentOnly,
            ["2", "1393", "2", "297", "1740", "297", "2", "1393", "2"],
        ),
        (
            Layering::IndependentOverPersistent,
            ["2", "1393", "68", "297", "1740", "573", "109", "1002", "12"],
        ),
        (
            Layering::ScopedInMemoryOverIndependentOverPersistent,
            ["2", "1393", "2", "297", "1740", "297", "68", "1002", "68"],
        ),
    ];

    #[test]
    fn prompt_template() {
        assert_eq!(
            guess_prompt("Alice", "[1, 1000]").as_str(),
            "Choose an integer from [1, 1000] for Alice to guess."
        );
    }

    #[test]
    fn golden_sequences_with_zero_provider_calls() {
        for (layering, expected) in GOLDEN {
            let dir = tempfile::tempdir().unwrap();
            let provider = ScriptedProvider::new(0).with_clock(Clock::deterministic());
            seed_example_cache(dir.path(), &provider).unwrap();
            let cfg = GuessingGameConfig {
                mode: CacheMode::ReplayStrict,
                ..GuessingGameConfig::example(layering, dir.path())
            };
            let outcome = run_guessing_game(&cfg, Arc::new(provider.clone())).unwrap();
            assert_eq!(outcome.responses, expected, "{layering}");
            assert_eq!(provider.total_calls(), 0);
            assert_eq!(outcome.transcript.misses(), 0);
        }
    }

    #[test]
    fn layering_names_round_trip() {
        for l in Layering::ALL {
            assert_eq!(l.as_str().parse::<Layering>().unwrap(), l);
        }
    }

    #[test]
    fn short_cache_fails_in_replay_strict() {
        let dir = tempfile::tempdir().unwrap();
        let provider = ScriptedProvider::new(0);
        seed_example_cache(dir.path(), &provider).unwrap();
        let cfg = GuessingGameConfig {
            users: vec!["Bob".into(); 3],
            mode: CacheMode::ReplayStrict,
            ..GuessingGameConfig::example(Layering::IndependentOverPersistent, dir.path())
        };
        let err = run_guessing_game(&cfg, Arc::new(provider)).unwrap_err();
        assert!(matches!(err, Error::ReplayMiss { stored_len: 2, position: 2, .. }));
    }

    #[test]
    fn empty_users_rejected() {
        let cfg = GuessingGameConfig {
            users: vec![],
            ..GuessingGameConfig::example(Layering::PersistentOnly, "/nonexistent")
        };
        assert!(matches!(
            run_guessing_game(&cfg, Arc::new(ScriptedProvider::new(0))),
            Err(Error::Config(_))
        ));
    }
}
