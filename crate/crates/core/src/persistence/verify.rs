//! Read-only integrity check of a cache directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::model::ResponseRecord;
use crate::persistence::dir::{entry_relpath, index_header, parse_index_line, ENTRIES_DIR, INDEX_FILE};
use crate::persistence::key::QueryKey;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Defect {
    MissingIndex,
    BadIndexHeader { found: String },
    BadIndexLine { line: usize, content: String },
    DuplicateIndexLine { digest: String },
    MissingEntry { digest: String },
    MissingTrailingNewline { digest: String },
    MalformedManifest { digest: String, detail: String },
    DigestMismatch { digest: String, manifest_digest: String, computed_digest: String },
    CountMismatch { digest: String, expected: u64, actual: u64 },
    MalformedRecord { digest: String, position: u64, detail: String },
    NonCanonicalRecord { digest: String, position: u64 },
    OrphanEntry { name: String },
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::MissingIndex => write!(f, "index file missing"),
            Defect::BadIndexHeader { found } => write!(f, "bad index header {found:?}"),
            Defect::BadIndexLine { line, content } => {
                write!(f, "malformed index line {line}: {content:?}")
            }
            Defect::DuplicateIndexLine { digest } => write!(f, "{digest}: listed twice in index"),
            Defect::MissingEntry { digest } => write!(f, "{digest}: entry file missing"),
            Defect::MissingTrailingNewline { digest } => {
                write!(f, "{digest}: entry file does not end with a newline")
            }
            Defect::MalformedManifest { digest, detail } => {
                write!(f, "{digest}: malformed manifest ({detail})")
            }
            Defect::DigestMismatch {
                digest,
                manifest_digest,
                computed_digest,
            } => write!(
                f,
                "{digest}: digest mismatch (manifest says {manifest_digest}, key hashes to {computed_digest})"
            ),
            Defect::CountMismatch {
                digest,
                expected,
                actual,
            } => write!(
                f,
                "{digest}: record count mismatch (index {expected}, file {actual})"
            ),
            Defect::MalformedRecord {
                digest,
                position,
                detail,
            } => write!(f, "{digest}: malformed record at position {position} ({detail})"),
            Defect::NonCanonicalRecord { digest, position } => write!(
                f,
                "{digest}: record at position {position} does not re-serialize byte-identically"
            ),
            Defect::OrphanEntry { name } => write!(f, "{name}: entry file not listed in index"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub entries_checked: usize,
    pub defects: Vec<Defect>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.defects.is_empty()
    }
}

/// Checks index/line-count agreement, manifest/digest agreement and record
/// well-formedness. Never writes; problems are reported, not raised.
pub fn verify_cache(root: impl AsRef<Path>) -> VerifyReport {
    let root = root.as_ref();
    let mut report = VerifyReport::default();
    let defects = &mut report.defects;

    let Ok(index) = fs::read_to_string(root.join(INDEX_FILE)) else {
        defects.push(Defect::MissingIndex);
        return report;
    };
    let mut lines = index.split_terminator('\n');
    let header = lines.next().unwrap_or_default();
    if header != index_header() {
        defects.push(Defect::BadIndexHeader {
            found: header.to_owned(),
        });
    }
    let mut listed: BTreeMap<String, u64> = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        match parse_index_line(line).filter(|l| l.filename == entry_relpath(&l.digest)) {
            Some(parsed) => {
                if listed.insert(parsed.digest.clone(), parsed.count).is_some() {
                    defects.push(Defect::DuplicateIndexLine {
                        digest: parsed.digest,
                    });
                }
            }
            None => defects.push(Defect::BadIndexLine {
                line: n + 2,
                content: line.to_owned(),
            }),
        }
    }

    for (digest, &expected) in &listed {
        report.entries_checked += 1;
        check_entry(root, digest, expected, defects);
    }

    let on_disk: BTreeSet<String> = fs::read_dir(root.join(ENTRIES_DIR))
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default();
    for name in on_disk {
        if !listed.contains_key(&name) {
            defects.push(Defect::OrphanEntry { name });
        }
    }
    report
}

fn check_entry(root: &Path, digest: &str, expected: u64, defects: &mut Vec<Defect>) {
    let Ok(content) = fs::read_to_string(root.join(ENTRIES_DIR).join(digest)) else {
        defects.push(Defect::MissingEntry {
            digest: digest.to_owned(),
        });
        return;
    };
    if !content.ends_with('\n') {
        defects.push(Defect::MissingTrailingNewline {
            digest: digest.to_owned(),
        });
    }
    let lines: Vec<&str> = content.split_terminator('\n').collect();
    match lines.first().map(|l| QueryKey::from_manifest_line(l)) {
        None => defects.push(Defect::MalformedManifest {
            digest: digest.to_owned(),
            detail: "empty entry file".into(),
        }),
        Some(Err(e)) => defects.push(Defect::MalformedManifest {
            digest: digest.to_owned(),
            detail: e.to_string(),
        }),
        Some(Ok((key, claimed))) => {
            if key.digest() != digest || claimed != digest {
                defects.push(Defect::DigestMismatch {
                    digest: digest.to_owned(),
                    manifest_digest: claimed,
                    computed_digest: key.digest().to_owned(),
                });
            }
        }
    }
    let actual = lines.len().saturating_sub(1) as u64;
    if actual != expected {
        defects.push(Defect::CountMismatch {
            digest: digest.to_owned(),
            expected,
            actual,
        });
    }
    for (position, line) in lines.iter().skip(1).enumerate() {
        let position = position as u64;
        match serde_json::from_str::<ResponseRecord>(line) {
            Err(e) => defects.push(Defect::MalformedRecord {
                digest: digest.to_owned(),
                position,
                detail: e.to_string(),
            }),
            Ok(rec) => {
                if serde_json::to_string(&rec).ok().as_deref() != Some(*line) {
                    defects.push(Defect::NonCanonicalRecord {
                        digest: digest.to_owned(),
                        position,
                    });
                }
            }
        }
    }
}
