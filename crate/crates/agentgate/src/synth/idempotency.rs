//! Replay store for write operations: one execution per idempotency key,
//! byte-identical responses for every replay inside the retention window.

use std::collections::HashMap;
use std::sync::Mutex;

use serde_json::Value;

struct Entry {
    result: Value,
    stored_at: u64,
}

pub struct IdempotencyStore {
    ttl_ms: u64,
    entries: Mutex<HashMap<String, Entry>>,
}

impl IdempotencyStore {
    pub fn new(ttl_ms: u64) -> Self {
        Self {
            ttl_ms,
            entries: Mutex::new(HashMap::new()),
        }
    }

    /// Stored result for a key, if it is still inside the retention window.
    /// Stale entries are dropped on access.
    pub fn get(&self, key: &str, now_ms: u64) -> Option<Value> {
        let mut entries = self.entries.lock().unwrap();
        match entries.get(key) {
            Some(e) if now_ms.saturating_sub(e.stored_at) <= self.ttl_ms => {
                Some(e.result.clone())
            }
            Some(_) => {
                entries.remove(key);
                None
            }
            None => None,
        }
    }

    pub fn put(&self, key: &str, result: Value, now_ms: u64) {
        self.entries.lock().unwrap().insert(
            key.to_string(),
            Entry {
                result,
                stored_at: now_ms,
            },
        );
    }

    pub fn purge_stale(&self, now_ms: u64) -> usize {
        let mut entries = self.entries.lock().unwrap();
        let before = entries.len();
        entries.retain(|_, e| now_ms.saturating_sub(e.stored_at) <= self.ttl_ms);
        before - entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
