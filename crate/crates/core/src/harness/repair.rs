//! A string-level description-repair loop.
//!
//! Per problem the loop layers `Independent(Persistent(base))`. Scoring a
//! description draws `C` programs and `E` tests through the persistent
//! (repeatable) reference, so a description always scores the same; each
//! repair attempt draws one candidate through the independent reference, so
//! attempts never reuse a candidate.
//!
//! The pipeline stand-ins ([`MockPipeline`], [`score_samples`]) keep only
//! what matters for caching: which prompts are issued, how many samples
//! each needs, and deterministic accept/reject decisions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::caching::{CacheMode, Independent, Repeatable};
use crate::error::{Error, Result};
use crate::harness::transcript::RunTranscript;
use crate::model::{Model, Prompt};
use crate::persistence::QueryKey;
use crate::providers::{ScriptedProvider, SeededText, TextGenerator};

pub const CODE_GEN_PREFIX: &str = "Write a Python function solve(x) for this description:\n";
pub const TEST_GEN_PREFIX: &str = "Write one assertion testing solve(x) for this description:\n";
pub const REPAIR_PREFIX: &str = "Rewrite this description to remove one ambiguity:\n";

/// Marker counted as one unresolved ambiguity in a mock description.
pub const AMBIGUITY_MARKER: &str = "(ambiguous)";

pub fn code_gen_prompt(description: &str) -> Prompt {
    Prompt::new(format!("{CODE_GEN_PREFIX}{description}"))
}

pub fn test_gen_prompt(description: &str) -> Prompt {
    Prompt::new(format!("{TEST_GEN_PREFIX}{description}"))
}

pub fn repair_prompt(description: &str) -> Prompt {
    Prompt::new(format!("{REPAIR_PREFIX}{description}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub description: String,
}

impl Problem {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        Problem {
            id: id.into(),
            description: description.into(),
        }
    }
}

pub fn default_problems() -> Vec<Problem> {
    vec![
        Problem::new(
            "sum-even",
            "Return the sum of the even values in xs (ambiguous). \
             Whether negative values count is unspecified (ambiguous).",
        ),
        Problem::new(
            "dedupe",
            "Remove duplicates from xs and return the result (ambiguous).",
        ),
        Problem::new(
            "longest-word",
            "Return the longest word in s (ambiguous). Ties are unspecified (ambiguous). \
             Punctuation handling is unspecified (ambiguous).",
        ),
    ]
}

fn default_programs() -> u64 {
    20
}

fn default_tests() -> u64 {
    10
}

fn default_attempts() -> u32 {
    3
}

fn default_threshold() -> f64 {
    0.9
}

fn default_mode() -> CacheMode {
    CacheMode::ReadWrite
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairLoopConfig {
    #[serde(default = "default_problems")]
    pub problems: Vec<Problem>,
    /// Programs drawn per score (C).
    #[serde(default = "default_programs")]
    pub programs_per_score: u64,
    /// Tests drawn per score (E).
    #[serde(default = "default_tests")]
    pub tests_per_score: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_mode")]
    pub mode: CacheMode,
    #[serde(default)]
    pub cache_dir: PathBuf,
}

impl RepairLoopConfig {
    pub fn new(cache_dir: impl Into<PathBuf>, mode: CacheMode) -> Self {
        RepairLoopConfig {
            problems: default_problems(),
            programs_per_score: default_programs(),
            tests_per_score: default_tests(),
            max_attempts: default_attempts(),
            threshold: default_threshold(),
            mode,
            cache_dir: cache_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.programs_per_score == 0 || self.tests_per_score == 0 || self.max_attempts == 0 {
            return Err(Error::Config(
                "programs_per_score, tests_per_score and max_attempts must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Text generator standing in for the code, test and repair LLM calls.
///
/// A description with `a` ambiguity markers admits `a + 1` interpretations.
/// Program and test samples cycle through them by position. A repair
/// usually resolves one marker; one time in four it merely rewords.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockPipeline;

pub fn interpretations(description: &str) -> u64 {
    description.matches(AMBIGUITY_MARKER).count() as u64 + 1
}

impl TextGenerator for MockPipeline {
    fn generate(&self, key: &QueryKey, position: u64, noise: u64) -> String {
        let prompt = key.prompt();
        if let Some(d) = prompt.strip_prefix(CODE_GEN_PREFIX) {
            format!("def solve(x):\n    return {}", position % interpretations(d))
        } else if let Some(d) = prompt.strip_prefix(TEST_GEN_PREFIX) {
            format!("assert solve(x) == {}", position % interpretations(d))
        } else if let Some(d) = prompt.strip_prefix(REPAIR_PREFIX) {
            let tag = noise % 1000;
            if noise.is_multiple_of(4) || !d.contains(AMBIGUITY_MARKER) {
                format!("{d} (reworded {tag:03})")
            } else {
                d.replacen(AMBIGUITY_MARKER, &format!("(clarified {tag:03})"), 1)
            }
        } else {
            SeededText.generate(key, position, noise)
        }
    }
}

/// A scripted provider wired to [`MockPipeline`].
pub fn mock_provider(seed: u64) -> ScriptedProvider {
    ScriptedProvider::new(seed).with_generator(MockPipeline)
}

fn program_output(program: &str) -> &str {
    program.rsplit("return ").next().unwrap_or("").trim()
}

fn test_expectation(test: &str) -> &str {
    test.rsplit("== ").next().unwrap_or("").trim()
}

/// Clusters programs by their pass/fail vector over the tests (a program
/// passes a test iff its output string equals the expected string), then
/// blends the largest cluster's share with an example-consistency bit:
/// whether that cluster passes at least half of the tests.
pub fn score_samples(programs: &[String], tests: &[String]) -> f64 {
    if programs.is_empty() {
        return 0.0;
    }
    let expected: Vec<&str> = tests.iter().map(|t| test_expectation(t)).collect();
    let mut clusters: BTreeMap<Vec<bool>, (usize, usize)> = BTreeMap::new();
    for (i, program) in programs.iter().enumerate() {
        let out = program_output(program);
        let outcome: Vec<bool> = expected.iter().map(|e| *e == out).collect();
        clusters.entry(outcome).or_insert((0, i)).0 += 1;
    }
    // Largest cluster; ties go to the one seen first.
    let (outcome, (size, _)) = clusters
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .expect("at least one program");
    let passed = outcome.iter().filter(|p| **p).count();
    let consistent = !tests.is_empty() && 2 * passed >= tests.len();
    0.5 * size as f64 / programs.len() as f64 + if consistent { 0.5 } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemResult {
    pub id: String,
    pub final_description: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairOutcome {
    pub results: Vec<ProblemResult>,
    /// Every description scored during the run.
    pub scored: BTreeSet<String>,
    pub transcript: RunTranscript,
}

struct Scorer<'a> {
    rep: &'a Repeatable,
    programs: u64,
    tests: u64,
}

impl Scorer<'_> {
    fn score(&self, description: &str, transcript: &mut RunTranscript) -> Result<f64> {
        let draw = |prompt: Prompt, n: u64, transcript: &mut RunTranscript| -> Result<Vec<String>> {
            let records = self.rep.sample(&prompt).take(n)?;
            transcript.record_pulls("repeatable", prompt.as_str(), 0, &records);
            Ok(records.into_iter().map(|r| r.text).collect())
        };
        let programs = draw(code_gen_prompt(description), self.programs, transcript)?;
        let tests = draw(test_gen_prompt(description), self.tests, transcript)?;
        Ok(score_samples(&programs, &tests))
    }
}

/// Runs the loop over every problem. Scores are recomputed exactly where
/// the loop asks for them; the repeatable layer makes repeats free.
pub fn run_repair_loop(cfg: &RepairLoopConfig, base: Arc<dyn Model>) -> Result<RepairOutcome> {
    cfg.validate()?;
    let mut transcript = RunTranscript::new();
    let mut scored = BTreeSet::new();
    let mut results = Vec::new();
    let rep = Arc::new(Repeatable::persistent(base, &cfg.cache_dir, cfg.mode)?);

    for problem in &cfg.problems {
        // A fresh independent scope per problem over the shared repeatable store.
        let ind = Independent::new(Arc::clone(&rep));
        let scorer = Scorer {
            rep: &rep,
            programs: cfg.programs_per_score,
            tests: cfg.tests_per_score,
        };
        let mut score = |d: &str, t: &mut RunTranscript| -> Result<f64> {
            scored.insert(d.to_owned());
            scorer.score(d, t)
        };

        let mut description = problem.description.clone();
        let mut attempts = 0;
        for _ in 0..cfg.max_attempts {
            attempts += 1;
            let prompt = repair_prompt(&description);
            let cursor = ind.sample(&prompt);
            let position = cursor.position();
            let candidate = cursor.next_record()?;
            transcript.record_pulls("independent", prompt.as_str(), position, std::slice::from_ref(&candidate));

            if score(&candidate.text, &mut transcript)? > score(&description, &mut transcript)? {
                description = candidate.text;
            }
            if score(&description, &mut transcript)? >= cfg.threshold {
                break;
            }
        }
        transcript.push_output(problem.id.clone(), description.clone());
        results.push(ProblemResult {
            id: problem.id.clone(),
            final_description: description,
            attempts,
        });
    }
    Ok(RepairOutcome {
        results,
        scored,
        transcript,
    })
}
