//! Line-oriented run transcripts.
//!
//! ```text
//! iidcache-transcript v1
//! {"kind":"pull","seq":0,"layer":"repeatable","prompt":"...","position":0,"origin":"miss",...}
//! ...
//! {"kind":"output","index":0,"label":"...","text":"..."}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Origin, ResponseRecord};
use crate::providers::{Pricing, UsageReport};

pub const TRANSCRIPT_HEADER: &str = "iidcache-transcript v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PullOrigin {
    /// Served by a cache layer; no provider contact.
    Hit,
    /// Drawn from the provider during this pull.
    Miss,
}

impl From<Origin> for PullOrigin {
    fn from(o: Origin) -> Self {
        match o {
            Origin::Cache => PullOrigin::Hit,
            Origin::Provider => PullOrigin::Miss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullEvent {
    pub seq: u64,
    /// Which model reference served the pull (e.g. "repeatable", "independent").
    pub layer: String,
    pub prompt: String,
    /// Position in the sequence read by the cursor.
    pub position: u64,
    pub origin: PullOrigin,
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub api_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputLine {
    pub index: u64,
    pub label: String,
    pub text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Line {
    Pull(PullEvent),
    Output(OutputLine),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunTranscript {
    pub events: Vec<PullEvent>,
    pub outputs: Vec<OutputLine>,
}

impl RunTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Logs records pulled through one cursor, starting at `first_position`.
    pub fn record_pulls(&mut self, layer: &str, prompt: &str, first_position: u64, records: &[ResponseRecord]) {
        for (offset, rec) in records.iter().enumerate() {
            let seq = self.events.len() as u64;
            self.events.push(PullEvent {
                seq,
                layer: layer.to_owned(),
                prompt: prompt.to_owned(),
                position: first_position + offset as u64,
                origin: rec.origin.into(),
                text: rec.text.clone(),
                prompt_tokens: rec.prompt_tokens,
                completion_tokens: rec.completion_tokens,
                api_time_ms: rec.api_time_ms,
            });
        }
    }

    pub fn push_output(&mut self, label: impl Into<String>, text: impl Into<String>) {
        let index = self.outputs.len() as u64;
        self.outputs.push(OutputLine {
            index,
            label: label.into(),
            text: text.into(),
        });
    }

    pub fn misses(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.origin == PullOrigin::Miss)
            .count()
    }

    pub fn serialize(&self) -> String {
        let mut out = String::from(TRANSCRIPT_HEADER);
        out.push('\n');
        let lines = self
            .events
            .iter()
            .cloned()
            .map(Line::Pull)
            .chain(self.outputs.iter().cloned().map(Line::Output));
        for line in lines {
            out.push_str(&serde_json::to_string(&line).expect("transcript line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<RunTranscript> {
        let mut lines = text.lines();
        if lines.next() != Some(TRANSCRIPT_HEADER) {
            return Err(Error::Config("not a transcript: bad header".into()));
        }
        let mut t = RunTranscript::new();
        for (n, line) in lines.enumerate() {
            let parsed: Line = serde_json::from_str(line)
                .map_err(|e| Error::Config(format!("transcript line {}: {e}", n + 2)))?;
            match parsed {
                Line::Pull(e) => t.events.push(e),
                Line::Output(o) => t.outputs.push(o),
            }
        }
        Ok(t)
    }
}

/// Sums token, time and cost over every pull; hits contribute zero.
pub fn usage_report(transcript: &RunTranscript, pricing: &Pricing) -> UsageReport {
    let mut report = UsageReport::default();
    for e in &transcript.events {
        report.prompt_tokens += e.prompt_tokens;
        report.completion_tokens += e.completion_tokens;
        report.api_time_ms += e.api_time_ms;
    }
    report.total_tokens = report.prompt_tokens + report.completion_tokens;
    report.cost = crate::providers::cost_of(&report, pricing);
    report
}
