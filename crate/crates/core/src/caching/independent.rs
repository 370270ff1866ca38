use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::model::{Model, Prompt, SampleCursor};
use crate::persistence::QueryKey;

/// Decorator that returns the same consumptive cursor for every `sample`
/// call with the same prompt, so no position is served twice.
///
/// Holds consumption positions only; it neither generates nor stores
/// responses. The positions are per instance and start from scratch on
/// construction.
pub struct Independent {
    inner: Arc<dyn Model>,
    shared: Mutex<HashMap<QueryKey, SampleCursor>>,
}

impl Independent {
    pub fn new(inner: impl Model + 'static) -> Self {
        Independent {
            inner: Arc::new(inner),
            shared: Mutex::new(HashMap::new()),
        }
    }

    /// Elements consumed so far for `prompt` through this instance.
    pub fn consumed(&self, prompt: &Prompt) -> u64 {
        let key = self.inner.query_key(prompt);
        let shared = self.shared.lock().unwrap_or_else(|p| p.into_inner());
        shared.get(&key).map_or(0, SampleCursor::position)
    }
}

impl Model for Independent {
    fn query_key(&self, prompt: &Prompt) -> QueryKey {
        self.inner.query_key(prompt)
    }

    fn sample(&self, prompt: &Prompt) -> SampleCursor {
        let key = self.inner.query_key(prompt);
        let mut shared = self.shared.lock().unwrap_or_else(|p| p.into_inner());
        shared
            .entry(key)
            .or_insert_with(|| self.inner.sample(prompt))
            .alias()
    }
}
