//! Experiment drivers built on the caching decorators.

pub mod game;
pub mod pass_at_k;
pub mod repair;
pub mod transcript;

pub use game::{run_guessing_game, seed_example_cache, GameOutcome, GuessingGameConfig, Layering};
pub use pass_at_k::pass_at_k;
pub use repair::{mock_provider, run_repair_loop, Problem, RepairLoopConfig, RepairOutcome};
pub use transcript::{usage_report, OutputLine, PullEvent, PullOrigin, RunTranscript};
