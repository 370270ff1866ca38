use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ResponseRecord;
use crate::persistence::{CacheDir, QueryKey};

/// Backing storage of a `Repeatable`: one append-only sequence per key.
pub trait CacheStore: Send {
    /// The full stored sequence, in position order.
    fn load(&mut self, key: &QueryKey) -> Result<Vec<ResponseRecord>>;

    /// Appends a record and returns its position.
    fn append(&mut self, key: &QueryKey, record: &ResponseRecord) -> Result<u64>;

    fn len(&mut self, key: &QueryKey) -> Result<u64> {
        Ok(self.load(key)?.len() as u64)
    }

    fn get(&mut self, key: &QueryKey, position: u64) -> Result<ResponseRecord> {
        self.load(key)?
            .into_iter()
            .nth(position as usize)
            .ok_or_else(|| Error::CorruptEntry {
                digest: key.digest().to_owned(),
                reason: format!("position {position} beyond stored sequence"),
            })
    }
}

/// Volatile store, empty at construction.
#[derive(Debug, Default)]
pub struct InMemoryStore {
    sequences: HashMap<QueryKey, Vec<ResponseRecord>>,
}

impl InMemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl CacheStore for InMemoryStore {
    fn load(&mut self, key: &QueryKey) -> Result<Vec<ResponseRecord>> {
        Ok(self.sequences.get(key).cloned().unwrap_or_default())
    }

    fn append(&mut self, key: &QueryKey, record: &ResponseRecord) -> Result<u64> {
        let seq = self.sequences.entry(key.clone()).or_default();
        seq.push(record.clone());
        Ok(seq.len() as u64 - 1)
    }

    fn len(&mut self, key: &QueryKey) -> Result<u64> {
        Ok(self.sequences.get(key).map_or(0, |s| s.len() as u64))
    }

    fn get(&mut self, key: &QueryKey, position: u64) -> Result<ResponseRecord> {
        self.sequences
            .get(key)
            .and_then(|s| s.get(position as usize))
            .cloned()
            .ok_or_else(|| Error::CorruptEntry {
                digest: key.digest().to_owned(),
                reason: format!("position {position} beyond stored sequence"),
            })
    }
}

/// On-disk store over a locked [`CacheDir`]. Entries are read from disk on
/// first access and mirrored in memory afterwards.
#[derive(Debug)]
pub struct PersistentStore {
    dir: CacheDir,
    mirror: HashMap<QueryKey, Vec<ResponseRecord>>,
}

impl PersistentStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_dir(CacheDir::open(root)?))
    }

    pub fn from_dir(dir: CacheDir) -> Self {
        PersistentStore {
            dir,
            mirror: HashMap::new(),
        }
    }

    pub fn dir(&self) -> &CacheDir {
        &self.dir
    }

    fn sequence(&mut self, key: &QueryKey) -> Result<&mut Vec<ResponseRecord>> {
        if !self.mirror.contains_key(key) {
            let loaded = self.dir.load_entry(key)?;
            self.mirror.insert(key.clone(), loaded);
        }
        Ok(self.mirror.get_mut(key).expect("just inserted"))
    }
}

impl CacheStore for PersistentStore {
    fn load(&mut self, key: &QueryKey) -> Result<Vec<ResponseRecord>> {
        Ok(self.sequence(key)?.clone())
    }

    fn append(&mut self, key: &QueryKey, record: &ResponseRecord) -> Result<u64> {
        self.sequence(key)?;
        let position = self.dir.append_response(key, record)?;
        let seq = self.mirror.get_mut(key).expect("loaded above");
        seq.push(record.clone());
        debug_assert_eq!(seq.len() as u64, position + 1);
        Ok(position)
    }

    fn len(&mut self, key: &QueryKey) -> Result<u64> {
        Ok(self.sequence(key)?.len() as u64)
    }

    fn get(&mut self, key: &QueryKey, position: u64) -> Result<ResponseRecord> {
        let digest = key.digest().to_owned();
        self.sequence(key)?
            .get(position as usize)
            .cloned()
            .ok_or_else(|| Error::CorruptEntry {
                digest,
                reason: format!("position {position} beyond stored sequence"),
            })
    }
}
