use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::caching::store::{CacheStore, InMemoryStore, PersistentStore};
use crate::caching::CacheMode;
use crate::error::{Error, Result};
use crate::model::{Model, Prompt, ResponseRecord, ResponseSource, SampleCursor};
use crate::persistence::{CacheDir, QueryKey};

struct RepeatableState {
    store: Box<dyn CacheStore>,
    /// One miss-fill cursor per key, shared by every outer cursor of this
    /// instance, so interleaved readers never burn two inner samples on one
    /// stored position.
    inner_cursors: HashMap<QueryKey, SampleCursor>,
}

impl RepeatableState {
    fn inner_cursor(&mut self, key: &QueryKey, make: impl FnOnce() -> SampleCursor) -> &SampleCursor {
        self.inner_cursors.entry(key.clone()).or_insert_with(make)
    }
}

/// Decorator whose every `sample` call for a prompt reads the same stored
/// sequence from position 0, filling misses from the inner model.
pub struct Repeatable {
    inner: Arc<dyn Model>,
    mode: CacheMode,
    state: Arc<Mutex<RepeatableState>>,
}

impl Repeatable {
    pub fn new(inner: impl Model + 'static, store: impl CacheStore + 'static, mode: CacheMode) -> Self {
        Repeatable {
            inner: Arc::new(inner),
            mode,
            state: Arc::new(Mutex::new(RepeatableState {
                store: Box::new(store),
                inner_cursors: HashMap::new(),
            })),
        }
    }

    /// Volatile cache, empty at construction, in `ReadWrite` mode.
    pub fn in_memory(inner: impl Model + 'static) -> Self {
        Self::new(inner, InMemoryStore::new(), CacheMode::ReadWrite)
    }

    /// On-disk cache rooted at `dir`; takes the directory lock.
    pub fn persistent(inner: impl Model + 'static, dir: impl AsRef<Path>, mode: CacheMode) -> Result<Self> {
        Ok(Self::new(inner, PersistentStore::open(dir)?, mode))
    }

    pub fn persistent_in(inner: impl Model + 'static, dir: CacheDir, mode: CacheMode) -> Self {
        Self::new(inner, PersistentStore::from_dir(dir), mode)
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    fn lock(&self) -> MutexGuard<'_, RepeatableState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// The stored sequence for `prompt`.
    pub fn stored(&self, prompt: &Prompt) -> Result<Vec<ResponseRecord>> {
        let key = self.inner.query_key(prompt);
        self.lock().store.load(&key)
    }

    pub fn stored_len(&self, prompt: &Prompt) -> Result<u64> {
        let key = self.inner.query_key(prompt);
        self.lock().store.len(&key)
    }
}

impl Model for Repeatable {
    fn query_key(&self, prompt: &Prompt) -> QueryKey {
        self.inner.query_key(prompt)
    }

    fn sample(&self, prompt: &Prompt) -> SampleCursor {
        if self.mode == CacheMode::Off {
            return self.inner.sample(prompt);
        }
        let key = self.inner.query_key(prompt);
        SampleCursor::new(
            key.clone(),
            StoredSequence {
                inner: Arc::clone(&self.inner),
                state: Arc::clone(&self.state),
                mode: self.mode,
                key,
                prompt: prompt.clone(),
            },
        )
    }
}

/// Iterator over a key's stored sequence.
struct StoredSequence {
    inner: Arc<dyn Model>,
    state: Arc<Mutex<RepeatableState>>,
    mode: CacheMode,
    key: QueryKey,
    prompt: Prompt,
}

impl StoredSequence {
    fn pull_inner(&self, state: &mut RepeatableState, n: u64) -> Result<Vec<ResponseRecord>> {
        let inner = &self.inner;
        let prompt = &self.prompt;
        state
            .inner_cursor(&self.key, || inner.sample(prompt))
            .take(n)
    }
}

impl ResponseSource for StoredSequence {
    fn pull(&mut self, position: u64) -> Result<ResponseRecord> {
        Ok(self
            .pull_batch(position, 1)?
            .pop()
            .expect("batch of one"))
    }

    fn pull_batch(&mut self, position: u64, n: u64) -> Result<Vec<ResponseRecord>> {
        let mut guard = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let state = &mut *guard;
        let end = position + n;
        match self.mode {
            CacheMode::Off => unreachable!("Off forwards sample() to the inner model"),
            CacheMode::RecordOnly => {
                let fresh = self.pull_inner(state, n)?;
                for rec in &fresh {
                    state.store.append(&self.key, rec)?;
                }
                Ok(fresh)
            }
            CacheMode::ReplayStrict => {
                let stored_len = state.store.len(&self.key)?;
                if end > stored_len {
                    return Err(Error::ReplayMiss {
                        digest: self.key.digest().to_owned(),
                        prompt: self.key.prompt().to_owned(),
                        position: position.max(stored_len),
                        stored_len,
                    });
                }
                (position..end)
                    .map(|i| Ok(state.store.get(&self.key, i)?.as_cache_hit()))
                    .collect()
            }
            CacheMode::ReadWrite => {
                let stored_len = state.store.len(&self.key)?;
                let fresh = if end > stored_len {
                    let fresh = self.pull_inner(state, end - stored_len)?;
                    for rec in &fresh {
                        state.store.append(&self.key, rec)?;
                    }
                    fresh
                } else {
                    Vec::new()
                };
                (position..end)
                    .map(|i| {
                        if i < stored_len {
                            Ok(state.store.get(&self.key, i)?.as_cache_hit())
                        } else {
                            Ok(fresh[(i - stored_len) as usize].clone())
                        }
                    })
                    .collect()
            }
        }
    }
}
