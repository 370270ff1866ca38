use std::fs;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::persistence::dir::CacheDir;

/// Exact aggregates over every entry of a cache directory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub keys: u64,
    pub records: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Total size of the entry files.
    pub bytes: u64,
}

impl CacheStats {
    /// Component-wise `self >= other`.
    pub fn dominates(&self, other: &CacheStats) -> bool {
        self.keys >= other.keys
            && self.records >= other.records
            && self.prompt_tokens >= other.prompt_tokens
            && self.completion_tokens >= other.completion_tokens
            && self.bytes >= other.bytes
    }
}

pub fn cache_stats(dir: &CacheDir) -> Result<CacheStats> {
    let mut stats = CacheStats::default();
    for (digest, _) in dir.entries() {
        let (_, records) = dir.load_digest(digest)?;
        let path = dir.entry_path(digest);
        stats.keys += 1;
        stats.records += records.len() as u64;
        stats.prompt_tokens += records.iter().map(|r| r.prompt_tokens).sum::<u64>();
        stats.completion_tokens += records.iter().map(|r| r.completion_tokens).sum::<u64>();
        stats.bytes += fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cache_is_all_zeros() {
        let tmp = tempfile::tempdir().unwrap();
        drop(CacheDir::open(tmp.path()).unwrap());
        let stats = cache_stats(&CacheDir::open_read_only(tmp.path()).unwrap()).unwrap();
        assert_eq!(stats, CacheStats::default());
    }
}
