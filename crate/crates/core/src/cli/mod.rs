//! Command-line front end.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rust_decimal::Decimal;
use serde::Serialize;
use serde_json::{json, Value};

use crate::caching::CacheMode;
use crate::error::{Error, Result};
use crate::harness::{
    mock_provider, run_guessing_game, run_repair_loop, usage_report, GuessingGameConfig, Layering,
    RepairLoopConfig, RunTranscript,
};
use crate::model::{Clock, Model, SamplingParams};
use crate::persistence::{cache_stats, slice_cache, verify_cache, CacheDir, CacheStats, INDEX_FILE};
use crate::providers::{
    HttpProvider, HttpProviderConfig, Pricing, ScriptedProvider, UsageReport, DEFAULT_API_KEY_ENV,
};

#[derive(Debug, Parser)]
#[command(name = "iidcache", version, about = "Inspect, maintain and exercise LLM response caches")]
pub struct Cli {
    /// Emit one JSON document instead of tables.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List keys, record counts and the first texts of each key.
    Inspect(InspectArgs),
    /// Check a cache directory for structural defects.
    Verify(CacheArg),
    /// Copy a prefix-respecting subset of a cache into a new directory.
    Slice(SliceArgs),
    /// Aggregate counts over a cache directory.
    Stats(CacheArg),
    /// Run the guessing-game scenario.
    Game(GameArgs),
    /// Run the description-repair scenario.
    Repair(RepairArgs),
}

#[derive(Debug, Args)]
pub struct CacheArg {
    #[arg(long)]
    pub cache: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub cache: PathBuf,
    /// Only keys whose prompt contains this substring.
    #[arg(long)]
    pub select: Option<String>,
    /// Texts shown per key.
    #[arg(long, default_value_t = 3)]
    pub first: usize,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    pub src: PathBuf,
    pub dst: PathBuf,
    /// Only keys whose prompt contains this substring.
    #[arg(long)]
    pub select: Option<String>,
    #[arg(long)]
    pub max_per_key: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Scripted,
    Http,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long, default_value = "read-write")]
    pub mode: CacheMode,
    /// Seed of the scripted provider.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stamp records with the epoch instead of the wall clock.
    #[arg(long)]
    pub deterministic_clock: bool,
    /// Remove a lock left behind by another process before starting.
    #[arg(long)]
    pub force_unlock: bool,
    #[arg(long, value_enum, default_value = "scripted")]
    pub provider: ProviderKind,
    /// Chat-completions endpoint root; required with `--provider http`.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
    /// Model id sent to the HTTP provider.
    #[arg(long, default_value = "gpt-4.1-mini")]
    pub model: String,
    /// USD per million prompt tokens.
    #[arg(long, default_value = "0.40")]
    pub price_prompt: Decimal,
    /// USD per million completion tokens.
    #[arg(long, default_value = "1.60")]
    pub price_completion: Decimal,
    /// Write the run transcript to this file.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GameArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "persistent-only")]
    pub layering: Layering,
    /// TOML file with `users` and `intervals`; defaults to the worked example.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RepairArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// TOML file with problems and loop settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Programs per score.
    #[arg(long = "c")]
    pub programs: Option<u64>,
    /// Tests per score.
    #[arg(long = "e")]
    pub tests: Option<u64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

/// Parses `std::env::args`, runs the command and maps the result to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            print_out(&out.render(json));
            if out.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            if json {
                print_out(&json_doc(&json!({ "error": { "kind": error_kind(&e), "message": e.to_string() } })));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(1)
        }
    }
}

fn print_out(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes());
    let _ = stdout.flush();
}

fn json_doc(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::ProviderUnavailable(_) => "provider-unavailable",
        Error::AuthFailure { .. } => "auth-failure",
        Error::RateLimited { .. } => "rate-limited",
        Error::RequestRejected { .. } => "request-rejected",
        Error::MalformedResponse(_) => "malformed-response",
        Error::Timeout { .. } => "timeout",
        Error::ReplayMiss { .. } => "replay-miss",
        Error::StoreIo { .. } => "store-io",
        Error::CorruptEntry { .. } => "corrupt-entry",
        Error::CorruptIndex { .. } => "corrupt-index",
        Error::LockHeld { .. } => "lock-held",
        Error::ReadOnly(_) => "read-only",
        Error::DestinationNotEmpty(_) => "destination-not-empty",
        Error::NotACacheDir(_) => "not-a-cache-dir",
        Error::InvalidParams(_) => "invalid-params",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::Config(_) => "config",
    }
}

/// A finished command: its JSON document, its table form, and whether it
/// counts as success.
pub struct Output {
    pub json: Value,
    pub text: String,
    pub success: bool,
}

impl Output {
    fn ok(json: Value, text: String) -> Self {
        Output {
            json,
            text,
            success: true,
        }
    }

    pub fn render(&self, json: bool) -> String {
        if json {
            json_doc(&self.json)
        } else {
            self.text.clone()
        }
    }
}

pub fn run(cli: Cli) -> Result<Output> {
    match cli.command {
        Command::Inspect(a) => cmd_inspect(&a),
        Command::Verify(a) => cmd_verify(&a.cache),
        Command::Slice(a) => cmd_slice(&a),
        Command::Stats(a) => cmd_stats(&a.cache),
        Command::Game(a) => cmd_game(&a),
        Command::Repair(a) => cmd_repair(&a),
    }
}

/// Opens `dir` read-only. An existing empty directory reads as an empty cache.
fn open_listing(dir: &Path) -> Result<Option<CacheDir>> {
    if !dir.join(INDEX_FILE).exists() && dir.is_dir() {
        let mut contents = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if contents.next().is_none() {
            return Ok(None);
        }
    }
    CacheDir::open_read_only(dir).map(Some)
}

#[derive(Serialize)]
struct KeyListing {
    digest: String,
    provider_id: String,
    model: String,
    prompt: String,
    count: u64,
    texts: Vec<String>,
}

fn cmd_inspect(a: &InspectArgs) -> Result<Output> {
    let mut keys = Vec::new();
    if let Some(cache) = open_listing(&a.cache)? {
        for (digest, count) in cache.entries() {
            let (key, records) = cache.load_digest(digest)?;
            let key = key.ok_or_else(|| Error::CorruptEntry {
                digest: digest.to_owned(),
                reason: "missing manifest".into(),
            })?;
            if a.select.as_deref().is_some_and(|s| !key.prompt().contains(s)) {
                continue;
            }
            keys.push(KeyListing {
                digest: digest.to_owned(),
                provider_id: key.provider_id().to_owned(),
                model: key.params().model_id.clone(),
                prompt: key.prompt().to_owned(),
                count,
                texts: records.into_iter().take(a.first).map(|r| r.text).collect(),
            });
        }
    }
    let mut text = format!("{} key(s)\n", keys.len());
    for k in &keys {
        text.push_str(&format!("{}  count={}  {:?}\n", &k.digest[..12], k.count, k.prompt));
        for t in &k.texts {
            text.push_str(&format!("    {t:?}\n"));
        }
    }
    Ok(Output::ok(json!({ "keys": keys }), text))
}

fn cmd_verify(dir: &Path) -> Result<Output> {
    if !dir.join(INDEX_FILE).is_file() {
        return Err(Error::NotACacheDir(dir.to_path_buf()));
    }
    let report = verify_cache(dir);
    let mut text = String::new();
    if report.is_ok() {
        text.push_str(&format!("ok ({} entries)\n", report.entries_checked));
    } else {
        for d in &report.defects {
            text.push_str(&format!("defect: {d}\n"));
        }
        text.push_str(&format!("{} defect(s) in {} entries\n", report.defects.len(), report.entries_checked));
    }
    Ok(Output {
        json: json!({ "ok": report.is_ok(), "entries_checked": report.entries_checked, "defects": report.defects }),
        text,
        success: report.is_ok(),
    })
}

fn cmd_slice(a: &SliceArgs) -> Result<Output> {
    let src = CacheDir::open_read_only(&a.src)?;
    let select = a.select.clone();
    let report = slice_cache(
        &src,
        &a.dst,
        |k| select.as_deref().is_none_or(|s| k.prompt().contains(s)),
        a.max_per_key,
    )?;
    Ok(Output::ok(
        json!({ "keys": report.keys, "records": report.records, "dst": a.dst }),
        format!("{} keys, {} records\n", report.keys, report.records),
    ))
}

fn cmd_stats(dir: &Path) -> Result<Output> {
    let stats = match open_listing(dir)? {
        Some(cache) => cache_stats(&cache)?,
        None => CacheStats::default(),
    };
    let text = format!(
        "keys               {}\nrecords            {}\nprompt tokens      {}\ncompletion tokens  {}\nbytes              {}\n",
        stats.keys, stats.records, stats.prompt_tokens, stats.completion_tokens, stats.bytes
    );
    Ok(Output::ok(serde_json::to_value(stats).expect("stats serialize"), text))
}

enum Provider {
    Scripted(ScriptedProvider),
    Http(Arc<HttpProvider>),
}

impl Provider {
    fn model(&self) -> Arc<dyn Model> {
        match self {
            Provider::Scripted(p) => Arc::new(p.clone()),
            Provider::Http(p) => Arc::clone(p) as Arc<dyn Model>,
        }
    }

    fn calls(&self) -> u64 {
        match self {
            Provider::Scripted(p) => p.total_calls(),
            Provider::Http(p) => p.requests_sent(),
        }
    }
}

impl RunArgs {
    fn clock(&self) -> Clock {
        if self.deterministic_clock {
            Clock::deterministic()
        } else {
            Clock::System
        }
    }

    fn pricing(&self) -> Pricing {
        Pricing::new(self.price_prompt, self.price_completion)
    }

    fn provider(&self, scripted: ScriptedProvider) -> Result<Provider> {
        match self.provider {
            ProviderKind::Scripted => Ok(Provider::Scripted(scripted.with_clock(self.clock()))),
            ProviderKind::Http => {
                let base_url = self
                    .base_url
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("--provider http requires --base-url".into()))?;
                let mut cfg = HttpProviderConfig::from_env(base_url, &self.api_key_env, SamplingParams::new(&self.model))?;
                cfg.pricing = self.pricing();
                cfg.clock = self.clock();
                Ok(Provider::Http(Arc::new(HttpProvider::new(cfg)?)))
            }
        }
    }

    fn prepare(&self) -> Result<()> {
        if self.force_unlock {
            drop(CacheDir::open_with(&self.cache, true)?);
        }
        Ok(())
    }

    fn write_transcript(&self, transcript: &RunTranscript) -> Result<()> {
        if let Some(path) = &self.transcript {
            fs::write(path, transcript.serialize()).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn usage_json(u: &UsageReport) -> Value {
    json!({
        "prompt_tokens": u.prompt_tokens,
        "completion_tokens": u.completion_tokens,
        "total_tokens": u.total_tokens,
        "api_time_s": u.api_time_secs(),
        "cost_usd": format!("{:.2}", u.cost_display()),
        "cost_usd_exact": u.cost.normalize().to_string(),
    })
}

/// The usage table: prompt tokens, completion tokens, total tokens, API time, cost.
pub fn usage_table(u: &UsageReport) -> String {
    let header = ["prompt tokens", "completion tokens", "total tokens", "API time (s)", "cost ($)"];
    let row = [
        u.prompt_tokens.to_string(),
        u.completion_tokens.to_string(),
        u.total_tokens.to_string(),
        format!("{:.1}", u.api_time_secs()),
        format!("{:.2}", u.cost_display()),
    ];
    let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        padded.join("  ") + "\n"
    };
    line(header.to_vec()) + &line(row.iter().map(String::as_str).collect())
}

fn cmd_game(a: &GameArgs) -> Result<Output> {
    a.run.prepare()?;
    let mut cfg = match &a.config {
        Some(path) => {
            let mut cfg: GuessingGameConfig = read_toml(path)?;
            cfg.layering = a.layering;
            cfg
        }
        None => GuessingGameConfig::example(a.layering, &a.run.cache),
    };
    cfg.cache_dir = a.run.cache.clone();
    cfg.mode = a.run.mode;
    let provider = a.run.provider(ScriptedProvider::new(a.run.seed))?;
    let outcome = run_guessing_game(&cfg, provider.model())?;
    a.run.write_transcript(&outcome.transcript)?;
    let usage = usage_report(&outcome.transcript, &a.run.pricing());

    let mut text = String::new();
    for o in &outcome.transcript.outputs {
        text.push_str(&format!("{}  {}\n", o.label, o.text));
    }
    text.push_str(&format!("responses: {:?}\n\n", outcome.responses));
    text.push_str(&usage_table(&usage));
    Ok(Output::ok(
        json!({
            "layering": cfg.layering.as_str(),
            "mode": cfg.mode.as_str(),
            "responses": outcome.responses,
            "usage": usage_json(&usage),
            "provider_calls": provider.calls(),
        }),
        text,
    ))
}

fn cmd_repair(a: &RepairArgs) -> Result<Output> {
    a.run.prepare()?;
    let mut cfg = match &a.config {
        Some(path) => read_toml(path)?,
        None => RepairLoopConfig::new(&a.run.cache, a.run.mode),
    };
    cfg.cache_dir = a.run.cache.clone();
    cfg.mode = a.run.mode;
    if let Some(c) = a.programs {
        cfg.programs_per_score = c;
    }
    if let Some(e) = a.tests {
        cfg.tests_per_score = e;
    }
    if let Some(m) = a.max_attempts {
        cfg.max_attempts = m;
    }
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    let provider = a.run.provider(mock_provider(a.run.seed))?;
    let outcome = run_repair_loop(&cfg, provider.model())?;
    a.run.write_transcript(&outcome.transcript)?;
    let usage = usage_report(&outcome.transcript, &a.run.pricing());

    let mut text = String::new();
    for r in &outcome.results {
        text.push_str(&format!("{} (attempts={}): {}\n", r.id, r.attempts, r.final_description));
    }
    text.push('\n');
    text.push_str(&usage_table(&usage));
    let results: Vec<Value> = outcome
        .results
        .iter()
        .map(|r| json!({ "id": r.id, "attempts": r.attempts, "final_description": r.final_description }))
        .collect();
    Ok(Output::ok(
        json!({
            "mode": cfg.mode.as_str(),
            "programs_per_score": cfg.programs_per_score,
            "tests_per_score": cfg.tests_per_score,
            "results": results,
            "scored_descriptions": outcome.scored.len(),
            "usage": usage_json(&usage),
            "provider_calls": provider.calls(),
        }),
        text,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_table_of_zeros() {
        let table = usage_table(&UsageReport::default());
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].contains("prompt tokens") && rows[0].contains("cost ($)"));
        let cells: Vec<&str> = rows[1].split_whitespace().collect();
        assert_eq!(cells, ["0", "0", "0", "0.0", "0.00"]);
    }

    #[test]
    fn missing_cache_flag_is_a_usage_error() {
        let err = Cli::try_parse_from(["iidcache", "verify"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
