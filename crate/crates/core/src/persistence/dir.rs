//! On-disk cache directory.
//!
//! Layout (UTF-8, LF line endings):
//!
//! ```text
//! <root>/index             header line, then "<digest> entries/<digest> <count>" sorted by digest
//! <root>/entries/<digest>  line 1: key manifest (JSON); lines 2..: one record (JSON) per position
//! <root>/LOCK              present while a process owns the directory
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ResponseRecord;
use crate::persistence::key::{is_digest, QueryKey, HASH_ALGORITHM};
use crate::persistence::lock::DirLock;

pub const INDEX_FILE: &str = "index";
pub const ENTRIES_DIR: &str = "entries";
pub const FORMAT_VERSION: &str = "v1";

pub fn index_header() -> String {
    format!("iidcache-index {FORMAT_VERSION} {HASH_ALGORITHM}")
}

pub(crate) fn entry_relpath(digest: &str) -> String {
    format!("{ENTRIES_DIR}/{digest}")
}

/// One parsed index line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct IndexLine {
    pub digest: String,
    pub filename: String,
    pub count: u64,
}

pub(crate) fn parse_index_line(line: &str) -> Option<IndexLine> {
    let mut parts = line.split(' ');
    let digest = parts.next()?;
    let filename = parts.next()?;
    let count = parts.next()?.parse().ok()?;
    if parts.next().is_some() || !is_digest(digest) {
        return None;
    }
    Some(IndexLine {
        digest: digest.to_owned(),
        filename: filename.to_owned(),
        count,
    })
}

/// A cache directory, either owned (locked, writable) or opened read-only.
#[derive(Debug)]
pub struct CacheDir {
    root: PathBuf,
    index: BTreeMap<String, u64>,
    lock: Option<DirLock>,
}

impl CacheDir {
    /// Opens `root` for writing, creating an empty cache if absent.
    /// Fails with `LockHeld` if a live process owns the directory.
    pub fn open(root: impl AsRef<Path>) -> Result<CacheDir> {
        Self::open_with(root, false)
    }

    /// Like [`CacheDir::open`]; `force_unlock` discards any existing lock first.
    pub fn open_with(root: impl AsRef<Path>, force_unlock: bool) -> Result<CacheDir> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let lock = DirLock::acquire(&root, force_unlock)?;
        let index_path = root.join(INDEX_FILE);
        let index = if index_path.exists() {
            read_index(&root)?
        } else {
            let entries = root.join(ENTRIES_DIR);
            fs::create_dir_all(&entries).map_err(|e| Error::io(&entries, e))?;
            BTreeMap::new()
        };
        let dir = CacheDir {
            root,
            index,
            lock: Some(lock),
        };
        if !index_path.exists() {
            dir.write_index()?;
        }
        Ok(dir)
    }

    /// Opens an existing cache without taking the lock. Never writes.
    pub fn open_read_only(root: impl AsRef<Path>) -> Result<CacheDir> {
        let root = root.as_ref().to_path_buf();
        if !root.join(INDEX_FILE).is_file() {
            return Err(Error::NotACacheDir(root));
        }
        let index = read_index(&root)?;
        Ok(CacheDir {
            root,
            index,
            lock: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_writable(&self) -> bool {
        self.lock.is_some()
    }

    /// Digests and record counts, in digest order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.index.iter().map(|(d, c)| (d.as_str(), *c))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Stored sequence length for a key (0 when absent).
    pub fn count(&self, key: &QueryKey) -> u64 {
        self.index.get(key.digest()).copied().unwrap_or(0)
    }

    pub fn entry_path(&self, digest: &str) -> PathBuf {
        self.root.join(ENTRIES_DIR).join(digest)
    }

    /// Raw lines of an entry file (manifest first), checked against the index.
    fn read_entry_lines(&self, digest: &str) -> Result<Vec<String>> {
        let path = self.entry_path(digest);
        let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        if !content.ends_with('\n') {
            return Err(Error::CorruptEntry {
                digest: digest.to_owned(),
                reason: "entry file does not end with a newline".into(),
            });
        }
        let lines: Vec<String> = content.split_terminator('\n').map(str::to_owned).collect();
        let expected = self.index.get(digest).copied().unwrap_or(0);
        let actual = lines.len().saturating_sub(1) as u64;
        if actual != expected {
            return Err(Error::CorruptEntry {
                digest: digest.to_owned(),
                reason: format!("index records {expected} responses, file holds {actual}"),
            });
        }
        Ok(lines)
    }

    /// The key recorded in an entry's manifest line.
    pub fn entry_key(&self, digest: &str) -> Result<QueryKey> {
        let lines = self.read_entry_lines(digest)?;
        parse_manifest(digest, lines.first())
    }

    /// Full stored sequence for `key`, in position order; empty when absent.
    pub fn load_entry(&self, key: &QueryKey) -> Result<Vec<ResponseRecord>> {
        Ok(self.load_digest(key.digest())?.1)
    }

    /// Key and records for a digest listed in the index.
    pub fn load_digest(&self, digest: &str) -> Result<(Option<QueryKey>, Vec<ResponseRecord>)> {
        if !self.index.contains_key(digest) {
            return Ok((None, Vec::new()));
        }
        let lines = self.read_entry_lines(digest)?;
        let key = parse_manifest(digest, lines.first())?;
        let records = lines[1..]
            .iter()
            .enumerate()
            .map(|(pos, line)| {
                serde_json::from_str(line).map_err(|e| Error::CorruptEntry {
                    digest: digest.to_owned(),
                    reason: format!("malformed record at position {pos}: {e}"),
                })
            })
            .collect::<Result<Vec<ResponseRecord>>>()?;
        Ok((Some(key), records))
    }

    fn require_lock(&self) -> Result<()> {
        if self.lock.is_none() {
            return Err(Error::ReadOnly(self.root.clone()));
        }
        Ok(())
    }

    /// Appends one record and returns its sequence position.
    pub fn append_response(&mut self, key: &QueryKey, record: &ResponseRecord) -> Result<u64> {
        self.require_lock()?;
        let line = serde_json::to_string(record).expect("record serializes");
        self.append_lines(key, std::slice::from_ref(&line))?;
        Ok(self.count(key) - 1)
    }

    /// Appends pre-serialized record lines, creating the entry if needed.
    pub(crate) fn append_lines(&mut self, key: &QueryKey, lines: &[String]) -> Result<()> {
        self.require_lock()?;
        if lines.is_empty() {
            return Ok(());
        }
        let path = self.entry_path(key.digest());
        let known = self.index.contains_key(key.digest());
        let mut buf = String::new();
        if !known {
            if path.exists() {
                return Err(Error::CorruptEntry {
                    digest: key.digest().to_owned(),
                    reason: "entry file exists but is not listed in the index".into(),
                });
            }
            buf.push_str(&key.manifest_line());
            buf.push('\n');
        }
        for line in lines {
            debug_assert!(!line.contains('\n'));
            buf.push_str(line);
            buf.push('\n');
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.write_all(buf.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        *self.index.entry(key.digest().to_owned()).or_insert(0) += lines.len() as u64;
        self.write_index()
    }

    /// Raw record lines (without the manifest) of an entry.
    pub(crate) fn record_lines(&self, digest: &str) -> Result<Vec<String>> {
        let mut lines = self.read_entry_lines(digest)?;
        lines.remove(0);
        Ok(lines)
    }

    fn write_index(&self) -> Result<()> {
        let mut out = index_header();
        out.push('\n');
        for (digest, count) in &self.index {
            out.push_str(&format!("{digest} {} {count}\n", entry_relpath(digest)));
        }
        let tmp = self.root.join(format!("{INDEX_FILE}.tmp"));
        fs::write(&tmp, out).map_err(|e| Error::io(&tmp, e))?;
        let dst = self.root.join(INDEX_FILE);
        fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
    }
}

fn parse_manifest(digest: &str, line: Option<&String>) -> Result<QueryKey> {
    let corrupt = |reason: String| Error::CorruptEntry {
        digest: digest.to_owned(),
        reason,
    };
    let line = line.ok_or_else(|| corrupt("missing manifest line".into()))?;
    let (key, claimed) = QueryKey::from_manifest_line(line)
        .map_err(|e| corrupt(format!("malformed manifest: {e}")))?;
    if key.digest() != digest || claimed != digest {
        return Err(corrupt("manifest digest does not match entry name".into()));
    }
    Ok(key)
}

fn read_index(root: &Path) -> Result<BTreeMap<String, u64>> {
    let path = root.join(INDEX_FILE);
    let content = match fs::read_to_string(&path) {
        Ok(c) => c,
        Err(e) if e.kind() == ErrorKind::NotFound => {
            return Err(Error::NotACacheDir(root.to_path_buf()))
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    let mut lines = content.lines();
    let header = lines.next().unwrap_or_default();
    if header != index_header() {
        return Err(Error::CorruptIndex {
            path,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut index = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let parsed = parse_index_line(line)
            .filter(|l| l.filename == entry_relpath(&l.digest))
            .ok_or_else(|| Error::CorruptIndex {
                path: path.clone(),
                reason: format!("malformed line {}: {line:?}", n + 2),
            })?;
        index.insert(parsed.digest, parsed.count);
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Clock, Origin, SamplingParams};
    use crate::persistence::canonical_key;

    fn rec(text: &str) -> ResponseRecord {
        ResponseRecord {
            text: text.into(),
            prompt_tokens: 2,
            completion_tokens: 1,
            api_time_ms: 5,
            provider_id: "scripted".into(),
            created_at: Clock::deterministic().now(),
            origin: Origin::Provider,
        }
    }

    fn key(prompt: &str) -> QueryKey {
        canonical_key("scripted", &SamplingParams::new("m"), prompt)
    }

    #[test]
    fn absent_key_loads_empty() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = CacheDir::open(tmp.path()).unwrap();
        assert!(dir.load_entry(&key("nope")).unwrap().is_empty());
    }

    #[test]
    fn append_positions_and_load() {
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = CacheDir::open(tmp.path()).unwrap();
        let k = key("p");
        assert_eq!(dir.append_response(&k, &rec("a")).unwrap(), 0);
        assert_eq!(dir.append_response(&k, &rec("b")).unwrap(), 1);
        assert_eq!(dir.append_response(&k, &rec("c")).unwrap(), 2);
        let texts: Vec<_> = dir.load_entry(&k).unwrap().into_iter().map(|r| r.text).collect();
        assert_eq!(texts, ["a", "b", "c"]);
    }

    #[test]
    fn appends_survive_reopen() {
        let tmp = tempfile::tempdir().unwrap();
        let k = key("p");
        {
            let mut dir = CacheDir::open(tmp.path()).unwrap();
            dir.append_response(&k, &rec("kept")).unwrap();
        }
        let dir = CacheDir::open(tmp.path()).unwrap();
        let loaded = dir.load_entry(&k).unwrap();
        assert_eq!(loaded.len(), 1);
        assert!(loaded[0].replay_eq(&rec("kept")));
    }

    #[test]
    fn append_preserves_file_prefix() {
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = CacheDir::open(tmp.path()).unwrap();
        let k = key("p");
        dir.append_response(&k, &rec("a")).unwrap();
        let before = fs::read(dir.entry_path(k.digest())).unwrap();
        dir.append_response(&k, &rec("b")).unwrap();
        let after = fs::read(dir.entry_path(k.digest())).unwrap();
        assert!(after.starts_with(&before));
        assert!(after.len() > before.len());
    }

    #[test]
    fn read_only_refuses_writes_and_non_caches() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            CacheDir::open_read_only(tmp.path()),
            Err(Error::NotACacheDir(_))
        ));
        drop(CacheDir::open(tmp.path()).unwrap());
        let mut ro = CacheDir::open_read_only(tmp.path()).unwrap();
        assert!(matches!(
            ro.append_response(&key("p"), &rec("x")),
            Err(Error::ReadOnly(_))
        ));
    }

    #[test]
    fn truncated_entry_is_corrupt() {
        let tmp = tempfile::tempdir().unwrap();
        let k = key("p");
        {
            let mut dir = CacheDir::open(tmp.path()).unwrap();
            dir.append_response(&k, &rec("a")).unwrap();
            dir.append_response(&k, &rec("b")).unwrap();
        }
        let path = tmp.path().join(ENTRIES_DIR).join(k.digest());
        let content = fs::read_to_string(&path).unwrap();
        let cut: Vec<&str> = content.lines().take(2).collect();
        fs::write(&path, format!("{}\n", cut.join("\n"))).unwrap();
        let dir = CacheDir::open_read_only(tmp.path()).unwrap();
        assert!(matches!(dir.load_entry(&k), Err(Error::CorruptEntry { .. })));
    }

    #[test]
    fn locked_twice_fails() {
        let tmp = tempfile::tempdir().unwrap();
        let _owner = CacheDir::open(tmp.path()).unwrap();
        assert!(matches!(
            CacheDir::open(tmp.path()),
            Err(Error::LockHeld { .. })
        ));
        // Read-only access does not need the lock.
        CacheDir::open_read_only(tmp.path()).unwrap();
    }
}
